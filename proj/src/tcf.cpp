#include "tcd/tcf.hpp"

#include <cmath>

namespace tcd {

TcfOrder parse_tcf_order(const std::string& name) {
  if (name == "tcf1") return TcfOrder::tcf1;
  if (name == "tcf2") return TcfOrder::tcf2;
  if (name == "tcfsplus") return TcfOrder::tcfsplus;
  throw argument_error("unknown TCF order '" + name + "' (expected tcf1, tcf2 or tcfsplus)");
}

std::string to_string(TcfOrder order) {
  switch (order) {
    case TcfOrder::tcf1: return "tcf1";
    case TcfOrder::tcf2: return "tcf2";
    case TcfOrder::tcfsplus: return "tcfsplus";
  }
  return "?";
}

TcfParameterization::TcfParameterization(TcfOrder order, const Denoiser& denoiser)
    : order_(order), denoiser_(&denoiser) {
  if (order == TcfOrder::tcfsplus && !denoiser.takes_end_time())
    throw config_error("tcfsplus requires a denoiser with an end-time input");
}

TcfCoefficients tcf_coefficients(TcfOrder order, const NoiseSchedule& schedule, const Vec& t, const Vec& s) {
  const Eigen::Index n = t.size();
  if (s.size() != n) throw argument_error("TCF: one start and one end time per point required");
  TcfCoefficients c;
  c.ratio.resize(n);
  c.weight_t.resize(n);
  c.identity.assign(static_cast<std::size_t>(n), false);
  if (order == TcfOrder::tcf2) {
    c.u.resize(n);
    c.ratio_u.resize(n);
    c.coef_u.resize(n);
    c.weight_u.resize(n);
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    if (s(j) > t(j))
      throw argument_error("TCF: end time " + std::to_string(s(j)) + " exceeds start time " + std::to_string(t(j)));
    const auto vt = schedule.evaluate(t(j));
    const auto vs = schedule.evaluate(s(j));
    const double h = vs.lambda - vt.lambda;
    // e^{-h} - 1 via expm1 keeps the coefficient exactly zero at h = 0.
    const double coef = -vs.alpha * std::expm1(-h);
    c.ratio(j) = vs.sigma / vt.sigma;
    c.identity[static_cast<std::size_t>(j)] = s(j) == t(j);
    if (order != TcfOrder::tcf2) {
      c.weight_t(j) = coef;
      continue;
    }
    if (h == 0.0) {
      c.u(j) = t(j);
      c.ratio_u(j) = 1.0;
      c.coef_u(j) = 0.0;
      c.weight_t(j) = coef;
      c.weight_u(j) = 0.0;
      continue;
    }
    const double u = schedule.t_of_lambda(vt.lambda + 0.5 * h);
    const auto vu = schedule.evaluate(u);
    const double r = (vu.lambda - vt.lambda) / h;
    c.u(j) = u;
    c.ratio_u(j) = vu.sigma / vt.sigma;
    c.coef_u(j) = -vu.alpha * std::expm1(vt.lambda - vu.lambda);
    c.weight_t(j) = coef * (1.0 - 1.0 / (2.0 * r));
    c.weight_u(j) = coef / (2.0 * r);
  }
  return c;
}

PointSet apply(const TcfParameterization& tcf, const PointSet& x, const Vec& t, const Vec& s,
               const Conditioning& cond) {
  if (cond.guided()) throw argument_error("TCF evaluation is guidance-free");
  if (x.cols() != t.size()) throw argument_error("TCF: one time per point required");
  const auto c = tcf_coefficients(tcf.order(), tcf.schedule(), t, s);
  const auto labels = cond.expanded(x.cols());
  const Denoiser& den = tcf.denoiser();

  const PointSet x0 = den.predict_x0(x, t, s, labels);
  PointSet out = scale_columns(x, c.ratio) + scale_columns(x0, c.weight_t);
  if (tcf.order() == TcfOrder::tcf2) {
    const PointSet x_u = scale_columns(x, c.ratio_u) + scale_columns(x0, c.coef_u);
    out += scale_columns(den.predict_x0(x_u, c.u, s, labels), c.weight_u);
  }
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    if (c.identity[static_cast<std::size_t>(j)]) out.col(j) = x.col(j);
  return out;
}

PointSet denoise_to_origin(const TcfParameterization& tcf, const PointSet& x, const Vec& t, const Conditioning& cond) {
  if (cond.guided()) throw argument_error("TCF evaluation is guidance-free");
  if (x.cols() != t.size()) throw argument_error("TCF: one time per point required");
  const Vec s = Vec::Constant(t.size(), tcf.schedule().t_min());
  const auto labels = cond.expanded(x.cols());
  const Denoiser& den = tcf.denoiser();
  const PointSet x0 = den.predict_x0(x, t, s, labels);
  if (tcf.order() != TcfOrder::tcf2) return x0;
  const auto c = tcf_coefficients(tcf.order(), tcf.schedule(), t, s);
  const PointSet x_u = scale_columns(x, c.ratio_u) + scale_columns(x0, c.coef_u);
  const PointSet x0_u = den.predict_x0(x_u, c.u, s, labels);
  PointSet out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double total = c.weight_t(j) + c.weight_u(j);
    out.col(j) = total == 0.0 ? x0.col(j) : ((c.weight_t(j) * x0.col(j) + c.weight_u(j) * x0_u.col(j)) / total).eval();
  }
  return out;
}

double local_error(const TcfParameterization& tcf, const GaussianMixture& gmm, const PointSet& x, double t,
                   double s, const ReferenceFlowConfig& flow) {
  const PointSet approx = apply(tcf, x, t, s);
  const PointSet exact = exact_flow(gmm, tcf.schedule(), x, t, s, flow);
  return (approx - exact).norm();
}

}  // namespace tcd
