#include "tcd/solvers.hpp"

#include <cmath>

namespace tcd {

SolverKind parse_solver_kind(const std::string& name) {
  if (name == "euler") return SolverKind::euler;
  if (name == "ddim") return SolverKind::ddim;
  if (name == "dpmpp_2s") return SolverKind::dpmpp_2s;
  throw argument_error("unknown solver '" + name + "' (expected euler, ddim or dpmpp_2s)");
}

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::euler: return "euler";
    case SolverKind::ddim: return "ddim";
    case SolverKind::dpmpp_2s: return "dpmpp_2s";
  }
  return "?";
}

int evaluations_per_step(SolverKind kind) { return kind == SolverKind::dpmpp_2s ? 2 : 1; }

namespace {

void check_interval(const PointSet& x, const Vec& t, const Vec& s, const char* who) {
  if (t.size() != x.cols() || s.size() != x.cols())
    throw argument_error(std::string(who) + ": one start and one end time per point required");
  for (Eigen::Index j = 0; j < t.size(); ++j)
    if (s(j) > t(j))
      throw argument_error(std::string(who) + ": end time " + std::to_string(s(j)) + " exceeds start time " +
                           std::to_string(t(j)));
}

/// Restores the exact identity on columns whose interval is empty.
void keep_identity_columns(PointSet& out, const PointSet& x, const Vec& t, const Vec& s) {
  for (Eigen::Index j = 0; j < t.size(); ++j)
    if (s(j) == t(j)) out.col(j) = x.col(j);
}

}  // namespace

PointSet ddim_step(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                   const Conditioning& cond) {
  check_interval(x, t, s, "ddim_step");
  const auto& sch = denoiser.schedule();
  const PointSet eps = guided_eps(denoiser, x, t, Vec(), cond);
  const PointSet x0 = x0_from_eps(sch, x, t, eps);
  PointSet out = scale_columns(x0, sch.alpha(s)) + scale_columns(eps, sch.sigma(s));
  keep_identity_columns(out, x, t, s);
  return out;
}

PointSet dpmpp_2s_step(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                       const Conditioning& cond) {
  check_interval(x, t, s, "dpmpp_2s_step");
  const auto& sch = denoiser.schedule();
  const Vec lam_t = sch.lambda(t);
  const Vec lam_s = sch.lambda(s);
  const Vec h = lam_s - lam_t;
  Vec u(t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j) u(j) = sch.t_of_lambda(lam_t(j) + 0.5 * h(j));
  const PointSet x_u = ddim_step(denoiser, x, t, u, cond);
  const PointSet x0_u = guided_x0(denoiser, x_u, u, Vec(), cond);
  const Vec ratio = sch.sigma(s).cwiseQuotient(sch.sigma(t));
  const Vec coef = -sch.alpha(s).cwiseProduct(h.unaryExpr([](double v) { return std::expm1(-v); }));
  PointSet out = scale_columns(x, ratio) + scale_columns(x0_u, coef);
  keep_identity_columns(out, x, t, s);
  return out;
}

PointSet euler_step(const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                    const Conditioning& cond) {
  check_interval(x, t, s, "euler_step");
  const auto& sch = denoiser.schedule();
  const PointSet x0 = guided_x0(denoiser, x, t, Vec(), cond);
  const Vec alpha = sch.alpha(t);
  const Vec sigma = sch.sigma(t);
  Vec coef(t.size());
  for (Eigen::Index j = 0; j < t.size(); ++j)
    coef(j) = (s(j) - t(j)) * sch.alpha_dot(t(j)) / (sigma(j) * sigma(j));
  PointSet out = x + scale_columns(x0 - scale_columns(x, alpha), coef);
  keep_identity_columns(out, x, t, s);
  return out;
}

PointSet solver_step(SolverKind kind, const Denoiser& denoiser, const PointSet& x, const Vec& t, const Vec& s,
                     const Conditioning& cond) {
  switch (kind) {
    case SolverKind::euler: return euler_step(denoiser, x, t, s, cond);
    case SolverKind::ddim: return ddim_step(denoiser, x, t, s, cond);
    case SolverKind::dpmpp_2s: return dpmpp_2s_step(denoiser, x, t, s, cond);
  }
  throw argument_error("unknown solver kind");
}

PointSet solve_k_steps(SolverKind kind, const Denoiser& denoiser, const PointSet& x, const Vec& t_from,
                       const Vec& t_to, int k, const Conditioning& cond) {
  if (k < 1) throw argument_error("solve_k_steps: k must be at least 1");
  check_interval(x, t_from, t_to, "solve_k_steps");
  PointSet y = x;
  Vec cur = t_from;
  for (int i = 1; i <= k; ++i) {
    const Vec next = i == k ? t_to : Vec(t_from + (t_to - t_from) * (static_cast<double>(i) / k));
    y = solver_step(kind, denoiser, y, cur, next, cond);
    cur = next;
  }
  return y;
}

}  // namespace tcd
