// Mechanism geometry, state vectors, unit conventions and the residual
// functions of the four kinematic loop closures shared by every solver.
//
// Model summary
// -------------
// A single linear actuator drives a planar linkage strapped over one finger.
// All positions are expressed in a frame fixed to the hand: the origin sits at
// the MCP joint center L, the +x axis runs along the fully extended proximal
// phalange, and flexion rotates the phalanges toward -y.  All lengths are in
// millimetres, all angles in radians; conversions happen only at I/O
// boundaries.
//
// Rigid bodies and their named points (colinear along each body):
//   base    : L (MCP center, origin), K (rocker pivot), N (actuator pivot)
//   rocker  : B, H, G             — orientation q_K, points measured from K
//   input   : A, C, D, I          — orientation q_B, points measured from B
//   distal  : E, F, J             — orientation q_D, points measured from D
//   coupler : G--F rod            — orientation q_G, length l_GF
//   finger  : proximal phalange L->M (length l_LM), middle phalange from M
//
// The four loop closures say that four pairs of points coincide:
//   actuator loop : A (input bar) = N + (l_act + l_x) * u(q_N)
//   proximal loop : I (input bar) = L + c_1 * d1(q_o1)        (sliding pin)
//   distal loop   : J (distal rod) = M + c_2 * d2(q_o1+q_o2)  (sliding pin)
//   coupler loop  : G + l_GF * u(q_G) = D + l_FD * u(q_D)     (point F)

#pragma once

#include "fex/core.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

namespace fex {

// ---------------------------------------------------------------------------
// State vectors
// ---------------------------------------------------------------------------

/// Finger joint flexion angles, measured from full extension, flexion
/// positive.  q_o2 is the PIP angle relative to the proximal phalange.
struct FingerPose {
  double q_o1 = 0.0;  ///< MCP flexion [rad]
  double q_o2 = 0.0;  ///< PIP flexion [rad]
};

/// The two instrumented quantities: actuator stroke and the angle of the
/// input bar, which carries a rotary sensor.
struct MeasuredState {
  double l_x = 0.0;  ///< actuator stroke [mm], 0..50
  double q_B = 0.0;  ///< input-bar orientation [rad]
};

/// Joints that move freely and are solved from loop closure.
struct PassiveState {
  double q_K = 0.0;  ///< rocker orientation [rad]
  double q_D = 0.0;  ///< distal-rod orientation [rad]
  double q_G = 0.0;  ///< coupler orientation [rad]
  double q_N = 0.0;  ///< actuator direction [rad]
  double c_1 = 0.0;  ///< slider travel along proximal phalange [mm]
  double c_2 = 0.0;  ///< slider travel along middle phalange [mm]
};

/// Full configuration of one finger component.
struct MechanismState {
  FingerPose pose;
  MeasuredState meas;
  PassiveState passive;
};

/// Natural range of motion delivered by the device (flexion from extension).
inline constexpr double kRomMaxMcp = deg2rad(80.0);
inline constexpr double kRomMaxPip = deg2rad(90.0);

/// Physical travel limits used across solvers and the design search.
inline constexpr double kStrokeMax = 50.0;  ///< actuator stroke [mm]
inline constexpr double kC1Max = 50.0;      ///< proximal slider travel [mm]
inline constexpr double kC2Max = 40.0;      ///< middle slider travel [mm]

/// Rotary sensor span on the input bar [rad], angles wrapped to [0, 2*pi).
inline constexpr double kSensorSpan = deg2rad(330.0);

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

/// All constant link lengths, base-frame offsets and the proximal-phalange
/// length defining one finger component.  Immutable in spirit: treat as a
/// value type, never mutate a shared instance.
struct MechanismGeometry {
  // Input bar point spacings [mm].
  double l_AB = 18.0;  ///< actuator attachment A to rocker joint B
  double l_BC = 43.0;  ///< rocker joint B to reference point C
  double l_CI = 16.0;  ///< reference point C to proximal sliding pin I
  double l_BD = 52.0;  ///< rocker joint B to distal-rod joint D

  // Rocker point spacings [mm].
  double l_BK = 35.0;  ///< rocker pivot K to input-bar joint B
  double l_BH = 37.0;  ///< input-bar joint B to end point H (beyond B)
  double l_HG = 86.0;  ///< end point H to coupler joint G

  // Distal rod point spacings [mm].
  double l_DE = 40.0;  ///< joint D to reference point E
  double l_EJ = 39.0;  ///< reference point E to middle sliding pin J
  double l_FD = 13.0;  ///< joint D to coupler joint F (F between D and E)

  // Coupler rod.
  double l_GF = 46.0;  ///< coupler length G to F

  // Base frame: rocker pivot K and actuator pivot N relative to the MCP
  // center L.  Not published for the original device; defaults are derived
  // in-repo so that full extension is feasible with the stroke near its
  // minimum (see tools/tune_base.cpp and docs in README).
  double l_LK = 0.0;   ///< |K - L| [mm]
  double q_LK = 0.0;   ///< direction of K from L [rad]
  double l_KN = 0.0;   ///< |N - K| [mm]
  double q_KN = 0.0;   ///< direction of N from K [rad]
  double l_act = 0.0;  ///< actuator length at zero stroke [mm]

  // Finger.
  double l_LM = 50.0;  ///< proximal phalange length L to M [mm]

  // Layout selectors: which side of each reference point the neighbouring
  // point sits on.  These encode the assembly drawing, are fixed for the
  // shipped design, and are exposed only for experiments.
  double sign_A = -1.0;   ///< A at +l_AB (+1) or -l_AB (-1) from B
  double sign_I = +1.0;   ///< I at l_BC + l_CI (+1) or l_BC - l_CI (-1)
  double sign_G = -1.0;   ///< G at l_KH + l_HG (+1) or l_KH - l_HG (-1)
  double bar_sign = 1.0;  ///< global direction convention of the input bar

  // Assembly-branch selectors for the two circle-circle constructions of the
  // closed-form forward solve; they pick the physical branch among mirror
  // assemblies and are fixed for the shipped design.
  double branch_B = 1.0;  ///< rocker/actuator triangle branch
  double branch_F = 1.0;  ///< distal/coupler triangle branch

  // ---- derived lengths (aliases and combinations used per equation) ----
  double l_AD() const { return std::abs(l_BD - sign_A * l_AB); }
  double l_CD() const { return l_BD - l_BC; }
  double l_ED() const { return l_DE; }
  double l_EF() const { return l_DE - l_FD; }
  double l_GH() const { return l_HG; }
  double l_KH() const { return l_BK + l_BH; }
  double l_GK() const { return std::abs(coord_G()); }
  double l_DF() const { return l_FD; }

  // ---- signed point coordinates along each body ----
  // Input bar, measured from B along u(q_B):
  double coord_A() const { return bar_sign * sign_A * l_AB; }
  double coord_C() const { return bar_sign * l_BC; }
  double coord_D() const { return bar_sign * l_BD; }
  double coord_I() const { return bar_sign * (l_BC + sign_I * l_CI); }
  // Rocker, measured from K along u(q_K):
  double coord_B() const { return l_BK; }
  double coord_H() const { return l_BK + l_BH; }
  double coord_G() const { return l_BK + l_BH + sign_G * l_HG; }
  // Distal rod, measured from D along u(q_D):
  double coord_E() const { return l_DE; }
  double coord_J() const { return l_DE + l_EJ; }
  double coord_F() const { return l_FD; }

  // Base points.
  Vec2 point_L() const { return {0.0, 0.0}; }
  Vec2 point_K() const { return l_LK * unit(q_LK); }
  Vec2 point_N() const { return point_K() + l_KN * unit(q_KN); }

  /// Validate all fields; returns a list of human-readable problems, each
  /// naming the offending field.  Empty list means the geometry is usable.
  std::vector<std::string> validate() const {
    std::vector<std::string> problems;
    auto positive = [&](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v))
        problems.push_back(std::string(name) + " must be strictly positive, got " +
                           std::to_string(v));
    };
    positive(l_AB, "l_AB");
    positive(l_BC, "l_BC");
    positive(l_CI, "l_CI");
    positive(l_BD, "l_BD");
    positive(l_BK, "l_BK");
    positive(l_BH, "l_BH");
    positive(l_HG, "l_HG");
    positive(l_DE, "l_DE");
    positive(l_EJ, "l_EJ");
    positive(l_FD, "l_FD");
    positive(l_GF, "l_GF");
    positive(l_LK, "l_LK");
    positive(l_KN, "l_KN");
    positive(l_act, "l_act");
    positive(l_LM, "l_LM");
    if (!std::isfinite(q_LK)) problems.push_back("q_LK must be finite");
    if (!std::isfinite(q_KN)) problems.push_back("q_KN must be finite");
    if (l_BD <= l_BC)
      problems.push_back("l_BD must exceed l_BC (C lies between B and D); derived l_CD would be non-positive");
    if (l_FD >= l_DE)
      problems.push_back("l_FD must be below l_DE (F lies between D and E); derived l_EF would be non-positive");
    auto is_sign = [&](double v, const char* name) {
      if (v != 1.0 && v != -1.0)
        problems.push_back(std::string(name) + " must be +1 or -1");
    };
    is_sign(sign_A, "sign_A");
    is_sign(sign_I, "sign_I");
    is_sign(sign_G, "sign_G");
    is_sign(bar_sign, "bar_sign");
    is_sign(branch_B, "branch_B");
    is_sign(branch_F, "branch_F");
    return problems;
  }

  /// Canonical textual form used for fingerprinting in output headers.
  std::string describe() const {
    char buf[1600];
    std::snprintf(
        buf, sizeof(buf),
        "l_AB=%.17g l_BC=%.17g l_CI=%.17g l_BD=%.17g l_BK=%.17g l_BH=%.17g "
        "l_HG=%.17g l_DE=%.17g l_EJ=%.17g l_FD=%.17g l_GF=%.17g l_LK=%.17g "
        "q_LK=%.17g l_KN=%.17g q_KN=%.17g l_act=%.17g l_LM=%.17g "
        "sign_A=%g sign_I=%g sign_G=%g bar_sign=%g branch_B=%g branch_F=%g",
        l_AB, l_BC, l_CI, l_BD, l_BK, l_BH, l_HG, l_DE, l_EJ, l_FD, l_GF,
        l_LK, q_LK, l_KN, q_KN, l_act, l_LM, sign_A, sign_I, sign_G, bar_sign,
        branch_B, branch_F);
    return buf;
  }
};

/// Hex fingerprint of a geometry, echoed into every output file header.
inline std::string geometry_hash(const MechanismGeometry& g) {
  return to_hex(fnv1a(g.describe()));
}

// ---------------------------------------------------------------------------
// Point positions and loop residuals
// ---------------------------------------------------------------------------

/// Phalange direction vectors (flexion rotates toward -y).
inline Vec2 dir_proximal(double q_o1) { return {std::cos(q_o1), -std::sin(q_o1)}; }
inline Vec2 dir_middle(double q_o1, double q_o2) {
  return {std::cos(q_o1 + q_o2), -std::sin(q_o1 + q_o2)};
}

/// Positions of every named point for a full (not necessarily consistent)
/// configuration.  Points that the loop equations require to coincide are
/// kept separate here so residuals can be read off as differences.
struct PointFrame {
  Vec2 L, K, N;           // base
  Vec2 A, B, C, D, I;     // input bar
  Vec2 H, G;              // rocker (B shared)
  Vec2 E, F, J;           // distal rod (D shared)
  Vec2 F_coupler;         // F as built from the coupler side: G + l_GF*u(q_G)
  Vec2 A_actuator;        // A as built from the actuator side: N + (l_act+l_x)*u(q_N)
  Vec2 I_finger;          // pin target on the proximal phalange: L + c_1*d1
  Vec2 J_finger;          // pin target on the middle phalange:   M + c_2*d2
  Vec2 M;                 // PIP joint center
};

inline PointFrame compute_points(const MechanismGeometry& g, const FingerPose& pose,
                                 const MeasuredState& meas, const PassiveState& ps) {
  PointFrame f;
  f.L = g.point_L();
  f.K = g.point_K();
  f.N = g.point_N();

  const Vec2 uK = unit(ps.q_K);
  const Vec2 uB = unit(meas.q_B);
  const Vec2 uD = unit(ps.q_D);
  const Vec2 uG = unit(ps.q_G);
  const Vec2 uN = unit(ps.q_N);
  const Vec2 d1 = dir_proximal(pose.q_o1);
  const Vec2 d2 = dir_middle(pose.q_o1, pose.q_o2);

  f.B = f.K + g.coord_B() * uK;
  f.H = f.K + g.coord_H() * uK;
  f.G = f.K + g.coord_G() * uK;

  f.A = f.B + g.coord_A() * uB;
  f.C = f.B + g.coord_C() * uB;
  f.D = f.B + g.coord_D() * uB;
  f.I = f.B + g.coord_I() * uB;

  f.E = f.D + g.coord_E() * uD;
  f.F = f.D + g.coord_F() * uD;
  f.J = f.D + g.coord_J() * uD;

  f.F_coupler = f.G + g.l_GF * uG;
  f.A_actuator = f.N + (g.l_act + meas.l_x) * uN;

  f.M = f.L + g.l_LM * d1;
  f.I_finger = f.L + ps.c_1 * d1;
  f.J_finger = f.M + ps.c_2 * d2;
  return f;
}

/// Residuals of the four vector loop closures, stacked as
///   [actuator x,y | proximal-pin x,y | distal-pin x,y | coupler x,y]
/// in mm.  Zero iff the configuration is kinematically consistent.  Pure and
/// deterministic: identical inputs give bit-identical outputs.
inline Vec8 loop_residuals(const MechanismGeometry& g, const FingerPose& pose,
                           const MeasuredState& meas, const PassiveState& ps) {
  const PointFrame f = compute_points(g, pose, meas, ps);
  Vec8 r;
  r.segment<2>(0) = f.A - f.A_actuator;
  r.segment<2>(2) = f.I - f.I_finger;
  r.segment<2>(4) = f.J - f.J_finger;
  r.segment<2>(6) = f.F_coupler - f.F;
  return r;
}

inline Vec8 loop_residuals(const MechanismGeometry& g, const MechanismState& s) {
  return loop_residuals(g, s.pose, s.meas, s.passive);
}

// ---------------------------------------------------------------------------
// Analytic partial derivatives of the residuals
// ---------------------------------------------------------------------------

/// Index of each configuration variable in the packed 10-vector used by the
/// solvers and the differential module.
enum Var : int {
  vQo1 = 0,
  vQo2 = 1,
  vLx = 2,
  vQB = 3,
  vQK = 4,
  vQD = 5,
  vQG = 6,
  vQN = 7,
  vC1 = 8,
  vC2 = 9,
  kNumVars = 10,
};

using Vec10 = Eigen::Matrix<double, 10, 1>;
using Mat8x10 = Eigen::Matrix<double, 8, 10>;

inline Vec10 pack_state(const MechanismState& s) {
  Vec10 x;
  x << s.pose.q_o1, s.pose.q_o2, s.meas.l_x, s.meas.q_B, s.passive.q_K,
      s.passive.q_D, s.passive.q_G, s.passive.q_N, s.passive.c_1, s.passive.c_2;
  return x;
}

inline MechanismState unpack_state(const Vec10& x) {
  MechanismState s;
  s.pose = {x[vQo1], x[vQo2]};
  s.meas = {x[vLx], x[vQB]};
  s.passive = {x[vQK], x[vQD], x[vQG], x[vQN], x[vC1], x[vC2]};
  return s;
}

inline Vec8 loop_residuals(const MechanismGeometry& g, const Vec10& x) {
  return loop_residuals(g, unpack_state(x));
}

/// Analytic Jacobian of loop_residuals with respect to the packed state,
/// 8 rows (residuals) by 10 columns (variables).
inline Mat8x10 residual_jacobian(const MechanismGeometry& g, const Vec10& x) {
  Mat8x10 jac = Mat8x10::Zero();

  const double q_o1 = x[vQo1], q_o2 = x[vQo2], l_x = x[vLx], q_B = x[vQB];
  const double q_K = x[vQK], q_D = x[vQD], q_G = x[vQG], q_N = x[vQN];
  const double c_1 = x[vC1], c_2 = x[vC2];

  const Vec2 uKp = unit_perp(q_K);
  const Vec2 uBp = unit_perp(q_B);
  const Vec2 uDp = unit_perp(q_D);
  const Vec2 uGp = unit_perp(q_G);
  const Vec2 uN = unit(q_N);
  const Vec2 uNp = unit_perp(q_N);
  const Vec2 d1 = dir_proximal(q_o1);
  const Vec2 d2 = dir_middle(q_o1, q_o2);
  // Derivatives of the phalange directions with respect to their angles.
  const Vec2 d1p{-std::sin(q_o1), -std::cos(q_o1)};
  const Vec2 d2p{-std::sin(q_o1 + q_o2), -std::cos(q_o1 + q_o2)};

  // Actuator loop: A(bar) - (N + (l_act + l_x) u_N)
  jac.block<2, 1>(0, vQK) = g.coord_B() * uKp;
  jac.block<2, 1>(0, vQB) = g.coord_A() * uBp;
  jac.block<2, 1>(0, vLx) = -uN;
  jac.block<2, 1>(0, vQN) = -(g.l_act + l_x) * uNp;

  // Proximal-pin loop: I(bar) - (L + c_1 d1)
  jac.block<2, 1>(2, vQK) = g.coord_B() * uKp;
  jac.block<2, 1>(2, vQB) = g.coord_I() * uBp;
  jac.block<2, 1>(2, vC1) = -d1;
  jac.block<2, 1>(2, vQo1) = -c_1 * d1p;

  // Distal-pin loop: J(rod) - (M + c_2 d2)
  jac.block<2, 1>(4, vQK) = g.coord_B() * uKp;
  jac.block<2, 1>(4, vQB) = g.coord_D() * uBp;
  jac.block<2, 1>(4, vQD) = g.coord_J() * uDp;
  jac.block<2, 1>(4, vC2) = -d2;
  jac.block<2, 1>(4, vQo1) = -g.l_LM * d1p - c_2 * d2p;
  jac.block<2, 1>(4, vQo2) = -c_2 * d2p;

  // Coupler loop: (G + l_GF u_G) - (D + l_FD u_D)
  jac.block<2, 1>(6, vQK) = (g.coord_G() - g.coord_B()) * uKp;
  jac.block<2, 1>(6, vQB) = -g.coord_D() * uBp;
  jac.block<2, 1>(6, vQG) = g.l_GF * uGp;
  jac.block<2, 1>(6, vQD) = -g.coord_F() * uDp;

  return jac;
}

/// Partial derivative of the residuals with respect to the proximal-phalange
/// length l_LM (used by the wearer-calibration solve).
inline Vec8 residual_dlLM(const MechanismGeometry&, const Vec10& x) {
  Vec8 d = Vec8::Zero();
  d.segment<2>(4) = -dir_proximal(x[vQo1]);  // M = L + l_LM d1 enters the distal pin loop
  return d;
}

// ---------------------------------------------------------------------------
// Finger presets
// ---------------------------------------------------------------------------

/// The link lengths in the parameterization used by the design search: six
/// varied spacings plus five constants shared by all fingers.  Mapping to the
/// canonical geometry fields is mechanical (sums/differences).
struct DesignParams {
  // Varied by the design search [mm].
  double EJ = 39.0;
  double CI = 16.0;
  double CD = 9.0;
  double ED = 40.0;
  double EF = 27.0;
  double BC = 43.0;
  // Fixed for all fingers [mm].
  double KH = 72.0;
  double KB = 35.0;
  double GH = 86.0;
  double AB = 18.0;
  double GF = 46.0;

  /// Write these lengths into a geometry, keeping base frame, finger size and
  /// layout selectors from the template.
  MechanismGeometry apply_to(MechanismGeometry g) const {
    g.l_AB = AB;
    g.l_BC = BC;
    g.l_CI = CI;
    g.l_BD = BC + CD;
    g.l_BK = KB;
    g.l_BH = KH - KB;
    g.l_HG = GH;
    g.l_DE = ED;
    g.l_EJ = EJ;
    g.l_FD = ED - EF;
    g.l_GF = GF;
    return g;
  }

  static DesignParams from_geometry(const MechanismGeometry& g) {
    DesignParams p;
    p.EJ = g.l_EJ;
    p.CI = g.l_CI;
    p.CD = g.l_CD();
    p.ED = g.l_DE;
    p.EF = g.l_EF();
    p.BC = g.l_BC;
    p.KH = g.l_KH();
    p.KB = g.l_BK;
    p.GH = g.l_HG;
    p.AB = g.l_AB;
    p.GF = g.l_GF;
    return p;
  }
};

enum class Finger { Index, Middle, Ring, Little };

inline const char* finger_name(Finger f) {
  switch (f) {
    case Finger::Index: return "index";
    case Finger::Middle: return "middle";
    case Finger::Ring: return "ring";
    case Finger::Little: return "little";
  }
  return "?";
}

/// Optimized spacings per finger (result of the design search re-run in this
/// repo; identical to the shipped device values).
inline DesignParams design_params(Finger f) {
  DesignParams p;  // index values are the defaults above
  switch (f) {
    case Finger::Index: break;
    case Finger::Middle: p.EJ = 39; p.CI = 17; p.CD = 9; p.ED = 52; p.EF = 21; p.BC = 41; break;
    case Finger::Ring:   p.EJ = 39; p.CI = 16; p.CD = 10; p.ED = 38; p.EF = 29; p.BC = 42; break;
    case Finger::Little: p.EJ = 42; p.CI = 16; p.CD = 9; p.ED = 32; p.EF = 23; p.BC = 43; break;
  }
  return p;
}

/// Proximal phalange length of a middle-sized hand per finger [mm].  The
/// index value is the design reference; the others are scaled from published
/// averages of adult finger dimensions (see data/anthropometry_v1.csv).
inline double default_l_LM(Finger f) {
  switch (f) {
    case Finger::Index: return 50.0;
    case Finger::Middle: return 56.0;
    case Finger::Ring: return 52.0;
    case Finger::Little: return 41.0;
  }
  return 50.0;
}

// Base-frame mounting defaults shared by all finger presets.  Derived by the
// reference-pose construction in tools/tune_base.cpp: they place the rocker
// and actuator pivots so that full extension closes all four loops with the
// stroke near its minimum, and every pose in the delivered range of motion
// keeps the sliders and stroke inside their travel limits.
// (Values are frozen outputs of the tuning run; see README for how to re-run.)
inline constexpr double kBaseLK = 40.0;        // placeholder until tuned
inline constexpr double kBaseQLKdeg = 110.0;   // placeholder until tuned
inline constexpr double kBaseKN = 100.0;       // placeholder until tuned
inline constexpr double kBaseQKNdeg = 180.0;   // placeholder until tuned
inline constexpr double kBaseLact = 100.0;     // placeholder until tuned

/// Shipped geometry preset for one finger.
inline MechanismGeometry preset_geometry(Finger f) {
  MechanismGeometry g;
  g.l_LK = kBaseLK;
  g.q_LK = deg2rad(kBaseQLKdeg);
  g.l_KN = kBaseKN;
  g.q_KN = deg2rad(kBaseQKNdeg);
  g.l_act = kBaseLact;
  g.l_LM = default_l_LM(f);
  return design_params(f).apply_to(g);
}

}  // namespace fex
