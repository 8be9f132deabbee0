// Differential kinematics and statics: the 8x8 partition of loop-equation
// partials, its reduction to the 2x2 map J_A between measured-joint and
// finger-joint velocities, and grasp-stability analysis built on it.
#pragma once

#include "fex/geometry.hpp"
#include "fex/kinematics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace fex {

enum class DiffStatus {
  Ok,
  SingularConstraintBlock,  ///< passive-joint block not invertible at this state
  SingularJacobian,         ///< reduced 2x2 map not invertible
  DegeneratePassiveColumn,  ///< feasible-torque direction undefined
};

inline const char* status_name(DiffStatus s) {
  switch (s) {
    case DiffStatus::Ok: return "ok";
    case DiffStatus::SingularConstraintBlock: return "singular_constraint_block";
    case DiffStatus::SingularJacobian: return "singular_jacobian";
    case DiffStatus::DegeneratePassiveColumn: return "degenerate_passive_column";
  }
  return "?";
}

/// Partition of the linearized loop equations.  Writing the residual system
/// as r(q_fin, q_m, q_p) = 0 with q_fin = (q_o1, q_o2), q_m = (l_x, q_B) and
/// q_p = (q_K, q_D, q_G, q_N, c_1, c_2), the two scalar equations of the
/// distal-pin loop form the top row group (the only loop touching both finger
/// joints) and the remaining six equations the bottom group.  With
///   J_Om = +d r_top / d q_fin     J_Rm = -d r_top / d q_m     J_Rp = -d r_top / d q_p
///   J_Op = +d r_bot / d q_fin     J_Cm = -d r_bot / d q_m     J_Cp = -d r_bot / d q_p
/// the chain eliminates the passive rates and yields
///   qdot_fin = J_A qdot_m,  J_A = (J_Om - J_Rp J_Cp^-1 J_Op)^-1 (J_Rm - J_Rp J_Cp^-1 J_Cm).
/// This ordering leaves every block structurally nonzero.
struct JacobianSet {
  Mat2 J_Om, J_Rm;
  Eigen::Matrix<double, 2, 6> J_Rp;
  Eigen::Matrix<double, 6, 2> J_Op, J_Cm;
  Eigen::Matrix<double, 6, 6> J_Cp;
  Mat2 J_A;
  /// Columns of J_A: dotted with the finger torques they give the actuator
  /// force and the (physically zero) bar torque respectively.  j_passive
  /// spans the normal of the feasible-torque line.
  Vec2 j_active, j_passive;
  double cond_J_Cp = 0.0;
};

struct JacobianResult {
  JacobianSet jac;
  DiffStatus status = DiffStatus::Ok;
  std::string detail;
  bool ok() const { return status == DiffStatus::Ok; }
};

/// Torques about the MCP and PIP joints [N mm].
struct JointTorques {
  double tau_1 = 0.0;
  double tau_2 = 0.0;
};

/// Generalized force on the measured joints: linear actuator force [N] and
/// the torque on the instrumented bar joint [N mm] (zero on hardware, since
/// that joint is passive).
struct ActuatorWrench {
  double F_A = 0.0;
  double tau_B = 0.0;
};

/// Condition-number threshold above which the passive block is reported as
/// singular.
inline constexpr double kCondLimit = 1e8;

/// Assemble all six partition blocks by analytic differentiation of the loop
/// residuals and reduce them to J_A.
inline JacobianResult assemble_jacobian(const MechanismGeometry& g,
                                        const MechanismState& state,
                                        double cond_limit = kCondLimit) {
  JacobianResult res;
  const Vec10 x = pack_state(state);
  const Mat8x10 full = residual_jacobian(g, x);

  constexpr int top[2] = {4, 5};              // distal-pin loop rows
  constexpr int bot[6] = {0, 1, 2, 3, 6, 7};  // actuator, proximal-pin, coupler rows
  constexpr int fin[2] = {vQo1, vQo2};
  constexpr int mea[2] = {vLx, vQB};
  constexpr int pas[6] = {vQK, vQD, vQG, vQN, vC1, vC2};

  auto& J = res.jac;
  for (int i = 0; i < 2; ++i) {
    for (int j = 0; j < 2; ++j) {
      J.J_Om(i, j) = full(top[i], fin[j]);
      J.J_Rm(i, j) = -full(top[i], mea[j]);
    }
    for (int j = 0; j < 6; ++j) J.J_Rp(i, j) = -full(top[i], pas[j]);
  }
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 2; ++j) {
      J.J_Op(i, j) = full(bot[i], fin[j]);
      J.J_Cm(i, j) = -full(bot[i], mea[j]);
    }
    for (int j = 0; j < 6; ++j) J.J_Cp(i, j) = -full(bot[i], pas[j]);
  }

  const Eigen::JacobiSVD<Eigen::Matrix<double, 6, 6>> svd(J.J_Cp);
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  J.cond_J_Cp = (smin > 0.0) ? smax / smin : std::numeric_limits<double>::infinity();
  if (!(J.cond_J_Cp < cond_limit)) {
    res.status = DiffStatus::SingularConstraintBlock;
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "passive block condition %.3e at pose (%.2f deg, %.2f deg)",
                  J.cond_J_Cp, rad2deg(state.pose.q_o1), rad2deg(state.pose.q_o2));
    res.detail = buf;
    return res;
  }

  const Eigen::PartialPivLU<Eigen::Matrix<double, 6, 6>> lu(J.J_Cp);
  const Eigen::Matrix<double, 6, 2> XO = lu.solve(J.J_Op);  // J_Cp^-1 J_Op
  const Eigen::Matrix<double, 6, 2> XC = lu.solve(J.J_Cm);  // J_Cp^-1 J_Cm
  const Mat2 lhs = J.J_Om - J.J_Rp * XO;
  const Mat2 rhs = J.J_Rm - J.J_Rp * XC;
  const double det = lhs.determinant();
  const double scale = lhs.cwiseAbs().maxCoeff();
  if (std::abs(det) <= 1e-14 * scale * scale) {
    res.status = DiffStatus::SingularConstraintBlock;
    res.detail = "reduced left-hand block is singular";
    return res;
  }
  J.J_A = lhs.inverse() * rhs;
  J.j_active = J.J_A.col(0);
  J.j_passive = J.J_A.col(1);
  return res;
}

/// Passive-joint rates consistent with the given finger and measured rates:
/// qdot_p = J_Cp^-1 (J_Op qdot_fin - J_Cm qdot_m).
inline Eigen::Matrix<double, 6, 1> passive_rates(const JacobianSet& J,
                                                 const Vec2& qdot_fin,
                                                 const Vec2& qdot_m) {
  return J.J_Cp.partialPivLu().solve(J.J_Op * qdot_fin - J.J_Cm * qdot_m);
}

/// Physical transmission: joint torques produced by an actuator force with
/// zero torque on the passive instrumented joint, tau = J_A^-T (F_A, 0)^T.
inline DiffStatus torques_from_actuator(const JacobianSet& J, double F_A,
                                        JointTorques* out) {
  const Mat2 Jt = J.J_A.transpose();
  const double det = Jt.determinant();
  const double scale = Jt.cwiseAbs().maxCoeff();
  if (std::abs(det) <= 1e-14 * scale * scale) return DiffStatus::SingularJacobian;
  const Vec2 tau = Jt.inverse() * Vec2{F_A, 0.0};
  out->tau_1 = tau[0];
  out->tau_2 = tau[1];
  return DiffStatus::Ok;
}

/// Generalized measured-joint force equivalent to the given joint torques:
/// (F_A, tau_B) = J_A^T tau.  tau_B is generally nonzero, meaning the torque
/// pair is not realizable by the single actuator without projection.
inline ActuatorWrench actuator_from_torques(const JacobianSet& J,
                                            const JointTorques& tau) {
  const Vec2 f = J.J_A.transpose() * Vec2{tau.tau_1, tau.tau_2};
  return {f[0], f[1]};
}

/// Central-difference estimate of J_A, used as the independent cross-check of
/// the analytic assembly: perturb each measured coordinate and re-solve the
/// forward problem.
inline Mat2 fd_reduced_jacobian(const MechanismGeometry& g,
                                const MechanismState& state, double delta = 1e-6) {
  SolveOptions opt;
  opt.tolerance = 1e-12;
  opt.max_iterations = 60;
  opt.warm_start = state;
  Mat2 fd;
  for (int j = 0; j < 2; ++j) {
    MeasuredState hi = state.meas, lo = state.meas;
    (j == 0 ? hi.l_x : hi.q_B) += delta;
    (j == 0 ? lo.l_x : lo.q_B) -= delta;
    const KinematicsResult rh = solve_fk_numeric(g, hi, opt);
    const KinematicsResult rl = solve_fk_numeric(g, lo, opt);
    fd(0, j) = (rh.state.pose.q_o1 - rl.state.pose.q_o1) / (2.0 * delta);
    fd(1, j) = (rh.state.pose.q_o2 - rl.state.pose.q_o2) / (2.0 * delta);
  }
  return fd;
}

// ---------------------------------------------------------------------------
// Grasp stability
// ---------------------------------------------------------------------------

struct GraspRow {
  FingerPose pose;
  double tau_1 = 0.0, tau_2 = 0.0;  ///< joint torques at the probe force [N mm]
  double ratio = 0.0;               ///< tau_1 / tau_2
  double p = 0.0;                   ///< sqrt(tau_1^2 + tau_2^2)
  bool same_sign = false;
  SolveStatus solve_status = SolveStatus::Ok;
  DiffStatus diff_status = DiffStatus::Ok;
};

struct GraspReport {
  std::vector<GraspRow> rows;
  std::size_t n_evaluated = 0;  ///< rows where both solves succeeded
  double stable_fraction = 0.0; ///< same-sign rows / evaluated rows
};

/// Evaluate joint torques at a probe actuator force over a pose grid and flag
/// per pose whether both torques drive the finger the same way.  Solver
/// failures are recorded per row; scanning continues.
inline GraspReport grasp_stability_report(const MechanismGeometry& g,
                                          const std::vector<FingerPose>& grid,
                                          double F_A = 1.0) {
  GraspReport rep;
  rep.rows.reserve(grid.size());
  const AssemblyTable seeds = AssemblyTable::build(g);
  SolveOptions opt;
  std::size_t stable = 0;
  // Warm-start bookkeeping for row-major scans: when the inner coordinate
  // wraps back to the start of a row, resume from the previous row's first
  // solution instead of the far end of the last row.
  std::optional<MechanismState> row_anchor;
  std::optional<FingerPose> prev_pose;
  for (const FingerPose& pose : grid) {
    GraspRow row;
    row.pose = pose;
    const bool row_start = !prev_pose || pose.q_o2 <= prev_pose->q_o2;
    if (row_start && row_anchor) opt.warm_start = *row_anchor;
    prev_pose = pose;
    const KinematicsResult ik = solve_ik(g, pose, opt, &seeds);
    row.solve_status = ik.report.status;
    if (ik.report.status == SolveStatus::Ok ||
        ik.report.status == SolveStatus::InfeasiblePose) {
      opt.warm_start = ik.state;  // march the scan
      if (row_start) row_anchor = ik.state;
      const JacobianResult jr = assemble_jacobian(g, ik.state);
      row.diff_status = jr.status;
      if (jr.ok()) {
        JointTorques tau;
        row.diff_status = torques_from_actuator(jr.jac, F_A, &tau);
        if (row.diff_status == DiffStatus::Ok) {
          row.tau_1 = tau.tau_1;
          row.tau_2 = tau.tau_2;
          row.ratio = (tau.tau_2 != 0.0)
                          ? tau.tau_1 / tau.tau_2
                          : std::numeric_limits<double>::infinity();
          row.p = std::hypot(tau.tau_1, tau.tau_2);
          row.same_sign = (tau.tau_1 > 0.0 && tau.tau_2 > 0.0) ||
                          (tau.tau_1 < 0.0 && tau.tau_2 < 0.0);
          ++rep.n_evaluated;
          if (row.same_sign) ++stable;
        }
      }
    }
    rep.rows.push_back(row);
  }
  rep.stable_fraction =
      rep.n_evaluated ? static_cast<double>(stable) / rep.n_evaluated : 0.0;
  return rep;
}

/// Regular pose grid over the delivered range of motion (inclusive bounds).
inline std::vector<FingerPose> rom_grid(double step_deg = 1.0,
                                        double max_mcp_deg = 80.0,
                                        double max_pip_deg = 90.0) {
  std::vector<FingerPose> grid;
  const int n1 = static_cast<int>(std::lround(max_mcp_deg / step_deg));
  const int n2 = static_cast<int>(std::lround(max_pip_deg / step_deg));
  grid.reserve(static_cast<std::size_t>((n1 + 1) * (n2 + 1)));
  for (int i = 0; i <= n1; ++i)
    for (int j = 0; j <= n2; ++j)
      grid.push_back({deg2rad(i * step_deg), deg2rad(j * step_deg)});
  return grid;
}

}  // namespace fex
