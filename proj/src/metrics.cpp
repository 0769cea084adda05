#include "ptycholab/metrics.hpp"

#include <cmath>
#include <sstream>

#include "ptycholab/ptycho.hpp"

namespace ptycholab {

namespace {

void check_pair(const ComplexGrid &a, const ComplexGrid &b, const RealTensor *mask) {
  if (!a.same_shape(b)) throw DimensionError("metric: shape mismatch");
  if (mask && (mask->shape.size() != 2 || mask->rows() != a.height || mask->cols() != a.width))
    throw DimensionError("metric: mask shape mismatch");
}

}  // namespace

double align_phase(const ComplexGrid &xhat, const ComplexGrid &x, const RealTensor *mask) {
  check_pair(xhat, x, mask);
  cdouble corr(0.0, 0.0);
  double ref_energy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double w = mask ? (mask->data[i] > 0.0 ? 1.0 : 0.0) : 1.0;
    corr += w * xhat.data[i] * std::conj(x.data[i]);
    ref_energy += w * std::norm(x.data[i]);
  }
  if (ref_energy <= 0.0) throw ContractError("align_phase: zero reference");
  return std::arg(corr);
}

double nrmse(const ComplexGrid &xhat, const ComplexGrid &x, const RealTensor *mask) {
  double theta = align_phase(xhat, x, mask);
  cdouble rot(std::cos(theta), std::sin(theta));
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double w = mask ? (mask->data[i] > 0.0 ? 1.0 : 0.0) : 1.0;
    err += w * std::norm(xhat.data[i] - rot * x.data[i]);
    ref += w * std::norm(x.data[i]);
  }
  return std::sqrt(err / ref);
}

double MethodStats::mean() const {
  if (nrmse_values.empty()) throw ContractError("MethodStats: empty sample list");
  double s = 0.0;
  for (double v : nrmse_values) s += v;
  return s / static_cast<double>(nrmse_values.size());
}

double MethodStats::stddev() const {
  double m = mean();
  double s = 0.0;
  for (double v : nrmse_values) s += (v - m) * (v - m);
  return std::sqrt(s / static_cast<double>(nrmse_values.size()));
}

std::string format_row(const MethodStats &stats) {
  std::ostringstream os;
  os.precision(3);
  os << std::fixed << stats.mean() << " ± " << stats.stddev() << " ("
     << stats.seconds_per_image << ")";
  return os.str();
}

std::string report_csv(const std::vector<MethodStats> &methods) {
  if (methods.empty()) throw ContractError("report_csv: empty input");
  std::ostringstream os;
  os << "method,mean_nrmse,std_nrmse,seconds_per_image\n";
  for (const auto &m : methods) {
    os.precision(9);
    os << m.label << "," << m.mean() << "," << m.stddev() << ","
       << m.seconds_per_image << "\n";
  }
  return os.str();
}

}  // namespace ptycholab
