#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ptycholab/tensor.hpp"

namespace ptycholab {

// Closed-form global phase minimizing ||xhat - e^{i theta} x||_2.
// mask (optional, same dims, 0/1) restricts the fit region.
double align_phase(const ComplexGrid &xhat, const ComplexGrid &x,
                   const RealTensor *mask = nullptr);

// || xhat - e^{i theta*} x || / || x || over the masked region.
double nrmse(const ComplexGrid &xhat, const ComplexGrid &x,
             const RealTensor *mask = nullptr);

struct MethodStats {
  std::string label;
  std::vector<double> nrmse_values;
  double seconds_per_image = 0.0;

  double mean() const;
  double stddev() const;  // population std over samples
};

// "mean ± std (seconds)" row, Table-style.
std::string format_row(const MethodStats &stats);

// CSV report: method,mean_nrmse,std_nrmse,seconds_per_image
std::string report_csv(const std::vector<MethodStats> &methods);

}  // namespace ptycholab
