// Pose solvers for the finger linkage: inverse (finger joints -> actuator and
// passives), forward numeric and forward closed-form (measurements -> finger
// joints and passives), and the wearer-calibration variant that estimates the
// proximal-phalange length.
#pragma once

#include "fex/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace fex {

enum class SolveStatus {
  Ok,
  NonConvergence,      ///< residual above tolerance after max iterations
  InfeasiblePose,      ///< converged, but stroke or a slider is outside travel
  AmbiguousBranch,     ///< converged onto a mirror assembly branch
  GeometryDegenerate,  ///< a closed-form triangle violates the triangle inequality
  ImplausibleLength,   ///< calibration output outside the plausible range
  InvalidInput,        ///< input outside the documented precondition range
};

inline const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Ok: return "ok";
    case SolveStatus::NonConvergence: return "non_convergence";
    case SolveStatus::InfeasiblePose: return "infeasible_pose";
    case SolveStatus::AmbiguousBranch: return "ambiguous_branch";
    case SolveStatus::GeometryDegenerate: return "geometry_degenerate";
    case SolveStatus::ImplausibleLength: return "implausible_length";
    case SolveStatus::InvalidInput: return "invalid_input";
  }
  return "?";
}

/// Options shared by all Newton-based solves.
struct SolveOptions {
  double tolerance = 1e-9;   ///< residual inf-norm convergence threshold [mm]
  int max_iterations = 100;
  double damping = 1.0;      ///< initial step scale, halved while the residual grows
  std::optional<MechanismState> warm_start;  ///< full-state initial guess
  bool analytic_jacobian = true;  ///< false switches to finite differences
  /// Acceptance box for the finger pose; numeric forward solves landing
  /// outside are reported as mirror-branch solutions rather than accepted.
  double pose_min_mcp = deg2rad(-20.0);
  double pose_max_mcp = deg2rad(100.0);
  double pose_min_pip = deg2rad(-20.0);
  double pose_max_pip = deg2rad(110.0);
};

struct SolveReport {
  SolveStatus status = SolveStatus::Ok;
  int iterations = 0;
  double residual_norm = 0.0;  ///< final residual inf-norm [mm]
  std::string detail;          ///< human-readable diagnostic (violated bound, ...)
};

struct KinematicsResult {
  MechanismState state;
  SolveReport report;
  bool ok() const { return report.status == SolveStatus::Ok; }
};

// ---------------------------------------------------------------------------
// Closed-form forward solve
// ---------------------------------------------------------------------------

namespace detail {

/// Place point P on circle(center0, r0) and circle(center1, r1), choosing the
/// branch by the sign of the rotation from the center0->center1 direction.
/// Returns false (and fills *why) when the triangle inequality fails beyond a
/// 1e-12 clamp on the cosine.
inline bool circle_circle_point(const Vec2& center0, double r0, const Vec2& center1,
                                double r1, double branch, const char* triangle,
                                Vec2* out, std::string* why) {
  constexpr double kEps = 1e-12;
  const Vec2 delta = center1 - center0;
  const double d = delta.norm();
  if (d < kEps || r0 <= 0.0) {
    if (why) *why = std::string("degenerate triangle ") + triangle + ": coincident centers";
    return false;
  }
  double cosa = (d * d + r0 * r0 - r1 * r1) / (2.0 * d * r0);
  if (cosa > 1.0 + kEps || cosa < -1.0 - kEps) {
    if (why) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "triangle %s cannot close: |cos| exceeds 1 by %.3e",
                    triangle, std::abs(cosa) - 1.0);
      *why = buf;
    }
    return false;
  }
  cosa = std::clamp(cosa, -1.0, 1.0);
  const double sina = std::sqrt(std::max(0.0, 1.0 - cosa * cosa));
  const Vec2 e = delta / d;
  const Vec2 ep{-e.y(), e.x()};
  *out = center0 + r0 * (cosa * e + branch * sina * ep);
  return true;
}

}  // namespace detail

/// Closed-form forward solve: given the two measured quantities, construct
/// the full state by chaining two circle-circle intersections, with assembly
/// branches fixed by the geometry's branch selectors.  Fails with
/// GeometryDegenerate (naming the failing triangle) when a triangle
/// inequality is violated.
inline KinematicsResult solve_fk_analytic(const MechanismGeometry& g,
                                          const MeasuredState& meas) {
  KinematicsResult res;
  res.state.meas = meas;
  const Vec2 K = g.point_K();
  const Vec2 N = g.point_N();
  const double l_AN = g.l_act + meas.l_x;
  const Vec2 uB = unit(meas.q_B);

  // A = B + coord_A*u_B lies on circle(N, l_AN), so B lies on the same circle
  // shifted by -coord_A*u_B; intersect with circle(K, l_BK) to place B.
  const Vec2 Nshift = N - g.coord_A() * uB;
  Vec2 B;
  std::string why;
  if (!detail::circle_circle_point(K, g.coord_B(), Nshift, l_AN, g.branch_B,
                                   "K-B-A (rocker/actuator)", &B, &why)) {
    res.report.status = SolveStatus::GeometryDegenerate;
    res.report.detail = why;
    return res;
  }
  const Vec2 uK = (B - K) / g.coord_B();
  const double q_K = std::atan2(uK.y(), uK.x());
  const Vec2 G = K + g.coord_G() * uK;
  const Vec2 A = B + g.coord_A() * uB;
  const Vec2 vAN = A - N;
  const double q_N = std::atan2(vAN.y(), vAN.x());

  // Coupler point F closes the distal rod against the rocker.
  const Vec2 D = B + g.coord_D() * uB;
  Vec2 F;
  if (!detail::circle_circle_point(D, g.coord_F(), G, g.l_GF, g.branch_F,
                                   "D-F-G (distal/coupler)", &F, &why)) {
    res.report.status = SolveStatus::GeometryDegenerate;
    res.report.detail = why;
    return res;
  }
  const Vec2 vDF = F - D;
  const double q_D = std::atan2(vDF.y(), vDF.x());
  const Vec2 vGF = F - G;
  const double q_G = std::atan2(vGF.y(), vGF.x());

  // Finger joints follow from the two sliding-pin positions.
  const Vec2 I = B + g.coord_I() * uB;
  const double c_1 = I.norm();
  const double q_o1 = -std::atan2(I.y(), I.x());
  const Vec2 uD = unit(q_D);
  const Vec2 J = D + g.coord_J() * uD;
  const Vec2 M = g.l_LM * dir_proximal(q_o1);
  const Vec2 vMJ = J - M;
  const double c_2 = vMJ.norm();
  const double q_o2 = -std::atan2(vMJ.y(), vMJ.x()) - q_o1;

  res.state.pose = {q_o1, q_o2};
  res.state.passive = {q_K, q_D, q_G, q_N, c_1, c_2};
  res.report.status = SolveStatus::Ok;
  res.report.residual_norm =
      loop_residuals(g, res.state).cwiseAbs().maxCoeff();
  return res;
}

// ---------------------------------------------------------------------------
// Newton core
// ---------------------------------------------------------------------------

namespace detail {

/// Column tag for the calibration unknown (proximal-phalange length); values
/// 0..9 refer to Var indices.
constexpr int kColLM = 10;

struct NewtonOutcome {
  SolveStatus status = SolveStatus::Ok;
  int iterations = 0;
  double residual_norm = 0.0;
  std::string detail;
};

/// Damped Newton on the 8 loop residuals over 8 selected unknowns.  x and lm
/// are updated in place.  Pure and deterministic.
inline NewtonOutcome newton_solve(const MechanismGeometry& g0,
                                  const std::array<int, 8>& unknowns, Vec10& x,
                                  double& lm, const SolveOptions& opt) {
  NewtonOutcome out;
  MechanismGeometry g = g0;

  auto eval = [&](const Vec10& xv, double lmv) {
    g.l_LM = lmv;
    return loop_residuals(g, xv);
  };

  Vec8 r = eval(x, lm);
  double rnorm = r.cwiseAbs().maxCoeff();

  for (int it = 0; it < opt.max_iterations; ++it) {
    if (rnorm < opt.tolerance) {
      out.iterations = it;
      out.residual_norm = rnorm;
      return out;
    }

    Eigen::Matrix<double, 8, 8> jac;
    if (opt.analytic_jacobian) {
      g.l_LM = lm;
      const Mat8x10 full = residual_jacobian(g, x);
      const Vec8 dlm = residual_dlLM(g, x);
      for (int c = 0; c < 8; ++c)
        jac.col(c) = (unknowns[static_cast<size_t>(c)] == kColLM)
                         ? dlm
                         : full.col(unknowns[static_cast<size_t>(c)]);
    } else {
      // One-sided finite differences as a fallback cross-check path.
      for (int c = 0; c < 8; ++c) {
        const int u = unknowns[static_cast<size_t>(c)];
        Vec10 xp = x;
        double lmp = lm;
        const double base = (u == kColLM) ? lm : x[u];
        const double h = 1e-7 * (1.0 + std::abs(base));
        if (u == kColLM)
          lmp += h;
        else
          xp[u] += h;
        jac.col(c) = (eval(xp, lmp) - r) / h;
      }
    }

    Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(jac);
    if (!lu.isInvertible()) {
      out.status = SolveStatus::NonConvergence;
      out.iterations = it;
      out.residual_norm = rnorm;
      out.detail = "singular iteration matrix";
      return out;
    }
    const Eigen::Matrix<double, 8, 1> step = lu.solve(r);

    // Backtracking: halve the step while it increases the residual.
    double lambda = opt.damping;
    Vec10 x_try;
    double lm_try = lm;
    Vec8 r_try;
    double rn_try = rnorm;
    for (int half = 0; half < 11; ++half) {
      x_try = x;
      lm_try = lm;
      for (int c = 0; c < 8; ++c) {
        const int u = unknowns[static_cast<size_t>(c)];
        if (u == kColLM)
          lm_try -= lambda * step[c];
        else
          x_try[u] -= lambda * step[c];
      }
      r_try = eval(x_try, lm_try);
      rn_try = r_try.cwiseAbs().maxCoeff();
      if (rn_try <= rnorm || lambda <= 1.0 / 1024.0) break;
      lambda *= 0.5;
    }
    x = x_try;
    lm = lm_try;
    r = r_try;
    rnorm = rn_try;
  }

  out.iterations = opt.max_iterations;
  out.residual_norm = rnorm;
  if (rnorm < opt.tolerance) return out;
  out.status = SolveStatus::NonConvergence;
  char buf[96];
  std::snprintf(buf, sizeof(buf), "residual %.3e mm after %d iterations", rnorm,
                opt.max_iterations);
  out.detail = buf;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// Coarse table of consistent assemblies built with the closed-form solve
/// over a fixed measurement grid.  Used to seed Newton when the caller
/// supplies no warm start.  The table is a pure function of the geometry;
/// callers running many solves should build it once and pass it around
/// (caches are caller-owned, never global).
struct AssemblyTable {
  std::vector<MechanismState> samples;

  static AssemblyTable build(const MechanismGeometry& g) {
    AssemblyTable t;
    for (int i = 0; i <= 10; ++i) {
      const double l_x = kStrokeMax * i / 10.0;
      for (int j = 0; j < 48; ++j) {
        const double q_B = 2.0 * kPi * j / 48.0;
        const KinematicsResult r = solve_fk_analytic(g, {l_x, q_B});
        if (r.report.status != SolveStatus::Ok) continue;
        const auto& s = r.state;
        // Keep samples in a generous neighbourhood of the working branch.
        if (s.pose.q_o1 < deg2rad(-45.0) || s.pose.q_o1 > deg2rad(135.0)) continue;
        if (s.pose.q_o2 < deg2rad(-140.0) || s.pose.q_o2 > deg2rad(140.0)) continue;
        if (s.passive.c_1 < -5.0 || s.passive.c_1 > kC1Max + 15.0) continue;
        if (s.passive.c_2 < -5.0 || s.passive.c_2 > kC2Max + 15.0) continue;
        t.samples.push_back(s);
      }
    }
    return t;
  }

  /// Sample whose finger pose is nearest to the target.
  const MechanismState* nearest_pose(const FingerPose& p) const {
    const MechanismState* best = nullptr;
    double best_d = 0.0;
    for (const auto& s : samples) {
      const double d = std::abs(s.pose.q_o1 - p.q_o1) + std::abs(s.pose.q_o2 - p.q_o2);
      if (!best || d < best_d) {
        best = &s;
        best_d = d;
      }
    }
    return best;
  }

  /// Sample whose measurements are nearest to the target (stroke scaled so a
  /// millimetre weighs like ~0.1 rad).
  const MechanismState* nearest_meas(const MeasuredState& m) const {
    const MechanismState* best = nullptr;
    double best_d = 0.0;
    for (const auto& s : samples) {
      const double d =
          0.1 * std::abs(s.meas.l_x - m.l_x) + std::abs(s.meas.q_B - m.q_B);
      if (!best || d < best_d) {
        best = &s;
        best_d = d;
      }
    }
    return best;
  }
};

// ---------------------------------------------------------------------------
// Public solves
// ---------------------------------------------------------------------------

namespace detail {

inline bool pose_in_box(const FingerPose& p, const SolveOptions& o) {
  return p.q_o1 >= o.pose_min_mcp && p.q_o1 <= o.pose_max_mcp &&
         p.q_o2 >= o.pose_min_pip && p.q_o2 <= o.pose_max_pip;
}

inline MechanismState seed_state(const MechanismGeometry& g, const SolveOptions& opt,
                                 const AssemblyTable* table,
                                 const FingerPose* pose_target,
                                 const MeasuredState* meas_target) {
  if (opt.warm_start) return *opt.warm_start;
  AssemblyTable local;
  const AssemblyTable* t = table;
  if (!t) {
    local = AssemblyTable::build(g);
    t = &local;
  }
  const MechanismState* s = pose_target ? t->nearest_pose(*pose_target)
                                        : t->nearest_meas(*meas_target);
  if (s) return *s;
  return MechanismState{};  // last resort; Newton will report honestly
}

}  // namespace detail

/// Inverse solve: find actuator stroke, bar angle and all passive joints for
/// a given finger pose.  On convergence the state is consistent even when the
/// status reports a violated travel bound.
inline KinematicsResult solve_ik(const MechanismGeometry& g, const FingerPose& pose,
                                 const SolveOptions& opt = {},
                                 const AssemblyTable* seeds = nullptr) {
  KinematicsResult res;
  if (!detail::pose_in_box(pose, opt)) {
    res.report.status = SolveStatus::InvalidInput;
    res.report.detail = "pose outside the feasibility box";
    res.state.pose = pose;
    return res;
  }
  MechanismState s0 = detail::seed_state(g, opt, seeds, &pose, nullptr);
  s0.pose = pose;
  Vec10 x = pack_state(s0);
  double lm = g.l_LM;
  const std::array<int, 8> unknowns{vLx, vQB, vQK, vQD, vQG, vQN, vC1, vC2};
  const auto nd = detail::newton_solve(g, unknowns, x, lm, opt);
  res.state = unpack_state(x);
  res.report.status = nd.status;
  res.report.iterations = nd.iterations;
  res.report.residual_norm = nd.residual_norm;
  res.report.detail = nd.detail;
  if (nd.status != SolveStatus::Ok) return res;

  // Travel-bound check: converged solutions outside the physical ranges are
  // reported (state kept) so screening code can inspect them.
  char buf[96];
  const auto& p = res.state;
  if (p.meas.l_x < 0.0 || p.meas.l_x > kStrokeMax) {
    std::snprintf(buf, sizeof(buf), "l_x=%.3f mm outside [0, %.0f]", p.meas.l_x, kStrokeMax);
    res.report.status = SolveStatus::InfeasiblePose;
    res.report.detail = buf;
  } else if (p.passive.c_1 < 0.0 || p.passive.c_1 > kC1Max) {
    std::snprintf(buf, sizeof(buf), "c_1=%.3f mm outside [0, %.0f]", p.passive.c_1, kC1Max);
    res.report.status = SolveStatus::InfeasiblePose;
    res.report.detail = buf;
  } else if (p.passive.c_2 < 0.0 || p.passive.c_2 > kC2Max) {
    std::snprintf(buf, sizeof(buf), "c_2=%.3f mm outside [0, %.0f]", p.passive.c_2, kC2Max);
    res.report.status = SolveStatus::InfeasiblePose;
    res.report.detail = buf;
  }
  return res;
}

/// Forward numeric solve: recover the finger pose and passive joints from the
/// two measured quantities.
inline KinematicsResult solve_fk_numeric(const MechanismGeometry& g,
                                         const MeasuredState& meas,
                                         const SolveOptions& opt = {},
                                         const AssemblyTable* seeds = nullptr) {
  KinematicsResult res;
  res.state.meas = meas;
  if (meas.l_x < 0.0 || meas.l_x > kStrokeMax) {
    res.report.status = SolveStatus::InvalidInput;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "l_x=%.3f mm outside sensor range [0, %.0f]",
                  meas.l_x, kStrokeMax);
    res.report.detail = buf;
    return res;
  }
  if (wrap_angle(meas.q_B) > kSensorSpan) {
    res.report.status = SolveStatus::InvalidInput;
    res.report.detail = "q_B outside the rotary sensor span";
    return res;
  }
  MechanismState s0 = detail::seed_state(g, opt, seeds, nullptr, &meas);
  s0.meas = meas;
  Vec10 x = pack_state(s0);
  double lm = g.l_LM;
  const std::array<int, 8> unknowns{vQo1, vQo2, vQK, vQD, vQG, vQN, vC1, vC2};
  const auto nd = detail::newton_solve(g, unknowns, x, lm, opt);
  res.state = unpack_state(x);
  res.report.status = nd.status;
  res.report.iterations = nd.iterations;
  res.report.residual_norm = nd.residual_norm;
  res.report.detail = nd.detail;
  if (nd.status != SolveStatus::Ok) return res;
  if (!detail::pose_in_box(res.state.pose, opt)) {
    res.report.status = SolveStatus::AmbiguousBranch;
    char buf[120];
    std::snprintf(buf, sizeof(buf),
                  "converged pose (%.2f deg, %.2f deg) is outside the natural box",
                  rad2deg(res.state.pose.q_o1), rad2deg(res.state.pose.q_o2));
    res.report.detail = buf;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Wearer calibration
// ---------------------------------------------------------------------------

/// Plausible adult proximal-phalange range [mm]; estimates outside are
/// flagged but still returned.
inline constexpr double kMinPlausibleLM = 25.0;
inline constexpr double kMaxPlausibleLM = 80.0;

struct CalibrationResult {
  double l_LM = 0.0;       ///< estimated proximal-phalange length [mm]
  MechanismState state;    ///< full state at the calibration pose
  SolveReport report;
  bool plausible = false;  ///< within [25, 80] mm
};

/// Estimate the wearer's proximal-phalange length from one measurement taken
/// while the middle-phalange slider is held at a known travel (its end stop).
/// Runs the numeric formulation with the phalange length as the eighth
/// unknown; the geometry's own l_LM is used only to seed the iteration.
inline CalibrationResult solve_calibration(const MechanismGeometry& g,
                                           const MeasuredState& meas,
                                           double c_2_fixed,
                                           const SolveOptions& opt = {},
                                           const AssemblyTable* seeds = nullptr) {
  CalibrationResult res;
  MechanismState s0 = detail::seed_state(g, opt, seeds, nullptr, &meas);
  s0.meas = meas;
  s0.passive.c_2 = c_2_fixed;
  Vec10 x = pack_state(s0);
  double lm = 50.0;  // deterministic mid-range seed
  const std::array<int, 8> unknowns{vQo1, vQo2, vC1, vQK, vQD, vQG, vQN,
                                    detail::kColLM};
  const auto nd = detail::newton_solve(g, unknowns, x, lm, opt);
  res.state = unpack_state(x);
  res.l_LM = lm;
  res.report.status = nd.status;
  res.report.iterations = nd.iterations;
  res.report.residual_norm = nd.residual_norm;
  res.report.detail = nd.detail;
  res.plausible = lm >= kMinPlausibleLM && lm <= kMaxPlausibleLM;
  if (nd.status == SolveStatus::Ok && !res.plausible) {
    res.report.status = SolveStatus::ImplausibleLength;
    char buf[96];
    std::snprintf(buf, sizeof(buf), "estimated length %.2f mm outside [%.0f, %.0f]",
                  lm, kMinPlausibleLM, kMaxPlausibleLM);
    res.report.detail = buf;
  }
  return res;
}

/// Solve the full state with the middle-phalange slider pinned at a given
/// travel and the PIP angle prescribed; used to construct calibration poses
/// and to locate the slider end stop.  Unknowns: q_o1, l_x, q_B and the
/// remaining passives.
inline KinematicsResult solve_distal_stop(const MechanismGeometry& g, double q_o2,
                                          double c_2_fixed,
                                          const SolveOptions& opt = {},
                                          const AssemblyTable* seeds = nullptr) {
  KinematicsResult res;
  const FingerPose guess{deg2rad(50.0), q_o2};
  MechanismState s0 = detail::seed_state(g, opt, seeds, &guess, nullptr);
  s0.pose.q_o2 = q_o2;
  s0.passive.c_2 = c_2_fixed;
  Vec10 x = pack_state(s0);
  double lm = g.l_LM;
  const std::array<int, 8> unknowns{vQo1, vLx, vQB, vQK, vQD, vQG, vQN, vC1};
  const auto nd = detail::newton_solve(g, unknowns, x, lm, opt);
  res.state = unpack_state(x);
  res.report.status = nd.status;
  res.report.iterations = nd.iterations;
  res.report.residual_norm = nd.residual_norm;
  res.report.detail = nd.detail;
  return res;
}

/// Stroke at which the middle-phalange slider can first reach its end stop
/// (minimum stroke over the one-parameter family of states with c_2 at its
/// limit).  This is the calibration stroke for the given geometry; it depends
/// on the wearer's phalange length, so it is computed rather than tabulated.
inline std::optional<KinematicsResult> calibration_pose(
    const MechanismGeometry& g, double c_2_limit = kC2Max,
    const SolveOptions& opt = {}) {
  const AssemblyTable table = AssemblyTable::build(g);
  std::optional<KinematicsResult> best;
  SolveOptions o = opt;
  for (int deg = 0; deg <= 120; deg += 2) {
    const KinematicsResult r =
        solve_distal_stop(g, deg2rad(deg), c_2_limit, o, &table);
    if (r.report.status != SolveStatus::Ok) continue;
    if (r.state.meas.l_x < 0.0 || r.state.meas.l_x > kStrokeMax) continue;
    if (!best || r.state.meas.l_x < best->state.meas.l_x) best = r;
    o.warm_start = r.state;  // march along the family
  }
  return best;
}

}  // namespace fex
