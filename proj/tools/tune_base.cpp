// Derives the base-frame mounting defaults (rocker pivot K, actuator pivot N,
// retracted actuator length, layout and assembly-branch selectors) that are
// baked into the finger presets.
//
// The original device never published these values, so they are reconstructed
// here from first principles:
//
//   1. Build the assembly exactly at full extension (q_o1 = q_o2 = 0) from a
//      small set of free handles: the proximal slider position c1_ref, the
//      input-bar angle qB_ref, the actuator direction qN_ref, the retracted
//      actuator length l_act, the stroke at extension lx_ref, and the
//      discrete layout choices.  Every loop closes at that pose by
//      construction, and the base points K and N fall out of it.
//   2. Screen each candidate along the extension->flexion diagonal, then
//      validate survivors on the full 1-degree pose grid: stroke and slider
//      travels inside their limits, torque ratio inside [0.25, 7.5] with a
//      common sign, sensor range respected, closed-form and numeric solves on
//      one consistent assembly branch, warm-started convergence in <= 10
//      iterations, and a reachable calibration pose for phalange lengths
//      45/50/55 mm.
//   3. Rank by worst-case margin and print the winner as C++ constants.
//
// Usage: tune_base [finger ...]   (default: all four fingers)

#include "fex/differential.hpp"
#include "fex/geometry.hpp"
#include "fex/kinematics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <future>
#include <optional>
#include <string>
#include <thread>
#include <vector>

using namespace fex;

namespace {

struct Handles {
  double c1_ref = 12.0;
  double qB_ref_deg = 0.0;
  double qN_ref_deg = 0.0;
  double l_act = 100.0;
  double lx_ref = 0.5;
  double sign_A = 1.0;
  double sign_I = 1.0;
  double sign_G = -1.0;
  double bar_sign = 1.0;
  double g_branch = 1.0;  // which intersection to take when placing G
};

struct Candidate {
  Handles h;
  MechanismGeometry geom;
  MechanismState ref;   // consistent state at full extension
  double score = -1.0;  // worst-case normalized margin over the full grid
  std::string note;
  // Diagnostics from the full-grid run.
  double lx_min = 0, lx_max = 0, c1_min = 0, c1_max = 0, c2_min = 0, c2_max = 0;
  double ratio_min = 0, ratio_max = 0, cond_max = 0;
  int iters_max = 0;
  double cal_lx[3] = {0, 0, 0};
};

// Build the assembly at full extension and derive the base frame. Returns
// nullopt when the chosen handles cannot close the loops.
std::optional<Candidate> construct(const DesignParams& dp, double l_LM,
                                   const Handles& h) {
  MechanismGeometry g;
  g.sign_A = h.sign_A;
  g.sign_I = h.sign_I;
  g.sign_G = h.sign_G;
  g.bar_sign = h.bar_sign;
  g.l_LM = l_LM;
  g.l_LK = g.l_KN = g.l_act = 1.0;  // placeholders; set below
  g = dp.apply_to(g);

  const double qB = deg2rad(h.qB_ref_deg);
  const Vec2 uB = unit(qB);
  const Vec2 I{h.c1_ref, 0.0};
  const Vec2 B = I - g.coord_I() * uB;
  const Vec2 D = B + g.coord_D() * uB;
  const Vec2 A = B + g.coord_A() * uB;

  // Distal rod: J must land on the extended middle-phalange line (y = 0)
  // ahead of the PIP joint.
  const double eJ = g.coord_J();
  if (std::abs(D.y()) >= eJ) return std::nullopt;
  const double qD = std::asin(-D.y() / eJ);  // cos(qD) > 0 branch
  const Vec2 uD = unit(qD);
  const Vec2 J = D + eJ * uD;
  const double c2_ref = J.x() - l_LM;
  if (c2_ref < 2.0 || c2_ref > kC2Max - 2.0) return std::nullopt;
  const Vec2 F = D + g.coord_F() * uD;

  // Rocker: G sits at distance |coord_G - coord_B| from B along the rocker
  // and at l_GF from F on the coupler.
  const double span = g.coord_B() - g.coord_G();  // signed B-to-G spacing
  Vec2 G;
  std::string why;
  if (!detail::circle_circle_point(B, std::abs(span), F, g.l_GF, h.g_branch,
                                   "B-G-F", &G, &why))
    return std::nullopt;
  const Vec2 uK = (B - G) / span;
  const double qK = std::atan2(uK.y(), uK.x());
  const Vec2 K = B - g.coord_B() * uK;
  const Vec2 Gchk = K + g.coord_G() * uK;
  if ((Gchk - G).norm() > 1e-9) return std::nullopt;

  const double qN = deg2rad(h.qN_ref_deg);
  const Vec2 N = A - (h.l_act + h.lx_ref) * unit(qN);

  if (K.norm() < 5.0 || (N - K).norm() < 5.0) return std::nullopt;
  g.l_LK = K.norm();
  g.q_LK = std::atan2(K.y(), K.x());
  g.l_KN = (N - K).norm();
  g.q_KN = std::atan2(N.y() - K.y(), N.x() - K.x());
  g.l_act = h.l_act;

  Candidate c;
  c.h = h;
  c.ref.pose = {0.0, 0.0};
  c.ref.meas = {h.lx_ref, qB};
  c.ref.passive = {qK, qD, std::atan2(F.y() - G.y(), F.x() - G.x()), qN,
                   h.c1_ref, c2_ref};

  // Construction sanity: all four loops must close exactly.
  if (loop_residuals(g, c.ref).cwiseAbs().maxCoeff() > 1e-9) return std::nullopt;

  // Fix the assembly-branch selectors by matching the closed-form solve
  // against the constructed reference state.
  bool matched = false;
  for (double bB : {1.0, -1.0}) {
    for (double bF : {1.0, -1.0}) {
      g.branch_B = bB;
      g.branch_F = bF;
      const KinematicsResult r = solve_fk_analytic(g, c.ref.meas);
      if (r.report.status != SolveStatus::Ok) continue;
      if ((pack_state(r.state) - pack_state(c.ref)).cwiseAbs().maxCoeff() < 1e-8) {
        matched = true;
        break;
      }
    }
    if (matched) break;
  }
  if (!matched) return std::nullopt;
  c.geom = g;
  return c;
}

// March the inverse solve along a pose path; false on any failure.
bool march(const MechanismGeometry& g, const std::vector<FingerPose>& path,
           MechanismState warm, std::vector<MechanismState>* out,
           int max_warm_iters = 25) {
  SolveOptions opt;
  opt.warm_start = warm;
  for (const FingerPose& p : path) {
    const KinematicsResult r = solve_ik(g, p, opt);
    if (r.report.status != SolveStatus::Ok &&
        r.report.status != SolveStatus::InfeasiblePose)
      return false;
    if (r.report.iterations > max_warm_iters) return false;
    opt.warm_start = r.state;
    if (out) out->push_back(r.state);
  }
  return true;
}

// Cheap screen along the diagonal and the two far edges of the motion range.
// Returns a pessimistic margin estimate, or nullopt when clearly infeasible.
std::optional<double> quick_screen(Candidate& c) {
  std::vector<FingerPose> diag;
  for (int i = 0; i <= 90; ++i)
    diag.push_back({deg2rad(80.0 * i / 90.0), deg2rad(90.0 * i / 90.0)});
  std::vector<MechanismState> states;
  if (!march(c.geom, diag, c.ref, &states)) return std::nullopt;

  // Stroke must grow toward flexion so extension sits at the stroke minimum.
  for (size_t i = 1; i < states.size(); ++i)
    if (states[i].meas.l_x < states[i - 1].meas.l_x - 1e-9) return std::nullopt;

  std::vector<FingerPose> edge1, edge2;
  for (int j = 0; j <= 90; j += 2) edge1.push_back({deg2rad(80.0), deg2rad(j)});
  for (int i = 0; i <= 80; i += 2) edge2.push_back({deg2rad(i), deg2rad(90.0)});
  std::vector<MechanismState> e1, e2;
  if (!march(c.geom, edge1, states.back(), &e1)) return std::nullopt;
  if (!march(c.geom, edge2, states.back(), &e2)) return std::nullopt;

  for (auto* vec : {&states, &e1, &e2})
    for (const MechanismState& s : *vec) {
      if (s.meas.l_x < 0.0 || s.meas.l_x > kStrokeMax) return std::nullopt;
      if (s.passive.c_1 < 0.5 || s.passive.c_1 > kC1Max - 0.5) return std::nullopt;
      if (s.passive.c_2 < 0.5 || s.passive.c_2 > kC2Max - 0.5) return std::nullopt;
      const double qb = rad2deg(wrap_angle(s.meas.q_B));
      if (qb < 2.0 || qb > 328.0) return std::nullopt;
    }

  double margin = 1e9;
  for (auto* vec : {&states, &e1, &e2})
    for (const MechanismState& s : *vec) {
      const JacobianResult jr = assemble_jacobian(c.geom, s);
      if (!jr.ok()) return std::nullopt;
      JointTorques tau;
      if (torques_from_actuator(jr.jac, 1.0, &tau) != DiffStatus::Ok)
        return std::nullopt;
      if (tau.tau_2 == 0.0) return std::nullopt;
      const double ratio = tau.tau_1 / tau.tau_2;
      if (ratio < 0.25 || ratio > 7.5) return std::nullopt;
      margin = std::min(margin, std::min(ratio - 0.25, 7.5 - ratio));
    }
  return margin;
}

// Full 1-degree grid validation; fills diagnostics and the worst-case score.
bool full_eval(Candidate& c) {
  const MechanismGeometry& g = c.geom;
  SolveOptions opt;
  std::optional<MechanismState> row_anchor;
  MechanismState warm = c.ref;

  c.lx_min = c.c1_min = c.c2_min = c.ratio_min = 1e9;
  c.lx_max = c.c1_max = c.c2_max = c.ratio_max = -1e9;
  c.cond_max = 0;
  c.iters_max = 0;

  for (int i = 0; i <= 80; ++i) {
    for (int j = 0; j <= 90; ++j) {
      const FingerPose pose{deg2rad(double(i)), deg2rad(double(j))};
      opt.warm_start = (j == 0 && row_anchor) ? *row_anchor : warm;
      const KinematicsResult r = solve_ik(g, pose, opt);
      if (r.report.status != SolveStatus::Ok) {
        c.note = "ik " + std::string(status_name(r.report.status)) + " at " +
                 std::to_string(i) + "," + std::to_string(j) + " " + r.report.detail;
        return false;
      }
      c.iters_max = std::max(c.iters_max, r.report.iterations);
      warm = r.state;
      if (j == 0) row_anchor = r.state;

      const auto& s = r.state;
      c.lx_min = std::min(c.lx_min, s.meas.l_x);
      c.lx_max = std::max(c.lx_max, s.meas.l_x);
      c.c1_min = std::min(c.c1_min, s.passive.c_1);
      c.c1_max = std::max(c.c1_max, s.passive.c_1);
      c.c2_min = std::min(c.c2_min, s.passive.c_2);
      c.c2_max = std::max(c.c2_max, s.passive.c_2);

      const double qb = rad2deg(wrap_angle(s.meas.q_B));
      if (qb < 2.0 || qb > 328.0) {
        c.note = "sensor range";
        return false;
      }

      // One consistent assembly branch: the closed-form solve must reproduce
      // the marched state everywhere.
      const KinematicsResult a = solve_fk_analytic(g, s.meas);
      if (a.report.status != SolveStatus::Ok ||
          (pack_state(a.state) - pack_state(s)).cwiseAbs().maxCoeff() > 1e-6) {
        c.note = "branch flip at " + std::to_string(i) + "," + std::to_string(j);
        return false;
      }

      const JacobianResult jr = assemble_jacobian(g, s);
      if (!jr.ok()) {
        c.note = "jacobian " + jr.detail;
        return false;
      }
      c.cond_max = std::max(c.cond_max, jr.jac.cond_J_Cp);
      JointTorques tau;
      if (torques_from_actuator(jr.jac, 1.0, &tau) != DiffStatus::Ok ||
          tau.tau_2 == 0.0) {
        c.note = "singular statics";
        return false;
      }
      const double ratio = tau.tau_1 / tau.tau_2;
      c.ratio_min = std::min(c.ratio_min, ratio);
      c.ratio_max = std::max(c.ratio_max, ratio);
    }
  }

  if (c.iters_max > 10) {
    c.note = "warm-start iterations " + std::to_string(c.iters_max);
    return false;
  }
  if (c.cond_max > 1e7) {
    c.note = "cond " + std::to_string(c.cond_max);
    return false;
  }

  // Extension must sit at (or within 50 um of) the grid-wide stroke minimum
  // and inside the first two millimetres of travel.
  const double lx_ext = c.h.lx_ref;
  if (c.lx_min < lx_ext - 0.05 || lx_ext > 2.0) {
    c.note = "extension stroke " + std::to_string(lx_ext) + " vs min " +
             std::to_string(c.lx_min);
    return false;
  }

  // Calibration feasibility for small/middle/big phalange lengths: the
  // distal slider must be able to reach its end stop within the stroke.
  const double lms[3] = {45.0, 50.0, 55.0};
  for (int k = 0; k < 3; ++k) {
    MechanismGeometry g2 = g;
    g2.l_LM = lms[k];
    SolveOptions o2;
    o2.warm_start = c.ref;
    KinematicsResult base = solve_ik(g2, {deg2rad(50.0), deg2rad(70.0)}, o2);
    if (base.report.status != SolveStatus::Ok &&
        base.report.status != SolveStatus::InfeasiblePose) {
      c.note = "calibration warmup failed (l_LM " + std::to_string(lms[k]) + ")";
      return false;
    }
    std::optional<double> cal;
    SolveOptions o3;
    o3.warm_start = base.state;
    for (int q2 = 30; q2 <= 115; q2 += 5) {
      const KinematicsResult r =
          solve_distal_stop(g2, deg2rad(double(q2)), kC2Max, o3);
      if (r.report.status != SolveStatus::Ok) continue;
      o3.warm_start = r.state;
      if (r.state.meas.l_x < 0.2 || r.state.meas.l_x > kStrokeMax - 0.5) continue;
      if (!cal || r.state.meas.l_x < *cal) cal = r.state.meas.l_x;
    }
    if (!cal) {
      c.note = "no calibration pose for l_LM " + std::to_string(lms[k]);
      return false;
    }
    c.cal_lx[k] = *cal;
  }

  // Worst-case normalized margin across all requirements.
  const double margins[] = {
      c.lx_min / 2.0,
      (kStrokeMax - c.lx_max) / 8.0,
      c.c1_min / 5.0,
      (kC1Max - c.c1_max) / 8.0,
      c.c2_min / 5.0,
      (kC2Max - c.c2_max) / 5.0,
      (c.ratio_min - 0.25) / 0.5,
      (7.5 - c.ratio_max) / 2.0,
  };
  c.score = *std::min_element(std::begin(margins), std::end(margins));
  return c.score > 0.0;
}

void tune_finger(Finger finger) {
  const DesignParams dp = design_params(finger);
  const double l_LM = default_l_LM(finger);
  std::printf("=== %s finger (l_LM %.0f mm) ===\n", finger_name(finger), l_LM);

  // Stage 1: coarse handle sweep with the cheap screen.
  std::vector<Handles> pool;
  for (double c1 : {4.0, 8.0, 12.0, 16.0, 20.0})
    for (double qB = -40.0; qB <= 40.0; qB += 10.0)
      for (double qN = -30.0; qN <= 30.0; qN += 10.0)
        for (double lact : {80.0, 100.0, 120.0})
          for (double sA : {1.0, -1.0})
            for (double sI : {1.0, -1.0})
              for (double sG : {-1.0, 1.0})
                for (double bar : {1.0, -1.0})
                  for (double gb : {1.0, -1.0}) {
                    Handles h;
                    h.c1_ref = c1;
                    h.qB_ref_deg = qB;
                    h.qN_ref_deg = qN;
                    h.l_act = lact;
                    h.sign_A = sA;
                    h.sign_I = sI;
                    h.sign_G = sG;
                    h.bar_sign = bar;
                    h.g_branch = gb;
                    pool.push_back(h);
                  }

  std::vector<Candidate> survivors;
  std::mutex mu;
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= pool.size()) return;
      std::optional<Candidate> c = construct(dp, l_LM, pool[i]);
      if (!c) continue;
      if (!quick_screen(*c)) continue;
      std::lock_guard<std::mutex> lock(mu);
      survivors.push_back(std::move(*c));
    }
  };
  {
    std::vector<std::thread> threads;
    const unsigned n = std::max(1u, std::thread::hardware_concurrency());
    for (unsigned t = 0; t < n; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  std::printf("stage 1: %zu/%zu candidates pass the diagonal screen\n",
              survivors.size(), pool.size());

  // Stage 2: full-grid validation.
  std::vector<Candidate> valid;
  next = 0;
  auto worker2 = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= survivors.size()) return;
      Candidate c = survivors[i];
      if (!full_eval(c)) continue;
      std::lock_guard<std::mutex> lock(mu);
      valid.push_back(std::move(c));
    }
  };
  {
    std::vector<std::thread> threads;
    const unsigned n = std::max(1u, std::thread::hardware_concurrency());
    for (unsigned t = 0; t < n; ++t) threads.emplace_back(worker2);
    for (auto& t : threads) t.join();
  }
  std::printf("stage 2: %zu candidates pass the full grid\n", valid.size());
  if (valid.empty()) return;

  std::sort(valid.begin(), valid.end(),
            [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

  // Stage 3: local refinement around the best candidate.
  Candidate best = valid.front();
  for (double dc1 : {-2.0, -1.0, 0.0, 1.0, 2.0})
    for (double dqB : {-5.0, -2.5, 0.0, 2.5, 5.0})
      for (double dqN : {-5.0, 0.0, 5.0})
        for (double dla : {-10.0, 0.0, 10.0}) {
          Handles h = valid.front().h;
          h.c1_ref += dc1;
          h.qB_ref_deg += dqB;
          h.qN_ref_deg += dqN;
          h.l_act += dla;
          std::optional<Candidate> c = construct(dp, l_LM, h);
          if (!c || !quick_screen(*c)) continue;
          if (!full_eval(*c)) continue;
          if (c->score > best.score) best = *c;
        }

  const auto& c = best;
  const auto& g = c.geom;
  std::printf("\nbest score %.3f  (handles: c1 %.1f qB %.1f qN %.1f l_act %.0f)\n",
              c.score, c.h.c1_ref, c.h.qB_ref_deg, c.h.qN_ref_deg, c.h.l_act);
  std::printf("  l_x   [%.3f, %.3f]  c_1 [%.2f, %.2f]  c_2 [%.2f, %.2f]\n",
              c.lx_min, c.lx_max, c.c1_min, c.c1_max, c.c2_min, c.c2_max);
  std::printf("  ratio [%.3f, %.3f]  cond %.2e  warm iters <= %d\n", c.ratio_min,
              c.ratio_max, c.cond_max, c.iters_max);
  std::printf("  calibration stroke: %.2f / %.2f / %.2f mm (l_LM 45/50/55)\n",
              c.cal_lx[0], c.cal_lx[1], c.cal_lx[2]);
  std::printf("  // frozen constants for preset_geometry(Finger::%s):\n",
              finger_name(finger));
  std::printf("  g.l_LK = %.6f; g.q_LK = deg2rad(%.6f);\n", g.l_LK,
              rad2deg(g.q_LK));
  std::printf("  g.l_KN = %.6f; g.q_KN = deg2rad(%.6f);\n", g.l_KN,
              rad2deg(g.q_KN));
  std::printf("  g.l_act = %.1f;\n", g.l_act);
  std::printf("  g.sign_A = %.0f; g.sign_I = %.0f; g.sign_G = %.0f; "
              "g.bar_sign = %.0f;\n",
              g.sign_A, g.sign_I, g.sign_G, g.bar_sign);
  std::printf("  g.branch_B = %.0f; g.branch_F = %.0f;\n\n", g.branch_B,
              g.branch_F);

  // Also print the runner-up spread for context.
  const size_t show = std::min<size_t>(5, valid.size());
  for (size_t i = 0; i < show; ++i)
    std::printf("  [rank %zu] score %.3f c1 %.1f qB %.1f qN %.1f l_act %.0f "
                "sA %.0f sI %.0f sG %.0f bar %.0f gb %.0f\n",
                i, valid[i].score, valid[i].h.c1_ref, valid[i].h.qB_ref_deg,
                valid[i].h.qN_ref_deg, valid[i].h.l_act, valid[i].h.sign_A,
                valid[i].h.sign_I, valid[i].h.sign_G, valid[i].h.bar_sign,
                valid[i].h.g_branch);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<Finger> fingers;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "index") fingers.push_back(Finger::Index);
    else if (a == "middle") fingers.push_back(Finger::Middle);
    else if (a == "ring") fingers.push_back(Finger::Ring);
    else if (a == "little") fingers.push_back(Finger::Little);
    else {
      std::fprintf(stderr, "unknown finger '%s'\n", a.c_str());
      return 64;
    }
  }
  if (fingers.empty())
    fingers = {Finger::Index, Finger::Middle, Finger::Ring, Finger::Little};
  for (Finger f : fingers) tune_finger(f);
  return 0;
}
