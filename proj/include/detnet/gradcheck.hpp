#pragma once

#include <functional>
#include <string>
#include <vector>

#include "detnet/graph.hpp"
#include "detnet/network.hpp"

// Finite-difference verification of the analytic gradients. The checks run
// the same templated kernels instantiated at double precision: central
// differences at eps ~ 1e-3 sit below float roundoff, so verifying the
// shared code path at f64 is the only way to make a 1e-3 relative tolerance
// meaningful.

namespace detnet {

using DiffOp = std::function<ValuePtrT<double>(const std::vector<ValuePtrT<double>>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::int64_t checked = 0;  // number of scalar entries compared
};

// Compares analytic gradients of a deterministic pure op against central
// differences (f(x+eps) - f(x-eps)) / (2 eps) for every element of every
// input, reporting the max relative error with denominator max(|a|,|b|,1e-8).
// Non-scalar outputs are reduced with a fixed random weighting.
GradCheckReport finite_diff_check(const DiffOp& op, std::vector<Tensor4T<double>> inputs,
                                  double eps);

struct OpCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  int seeds = 0;
};

// Named per-operator and per-block checks backing `detnet gradcheck`.
std::vector<std::string> gradcheck_op_names();
OpCheckResult run_gradcheck(const std::string& op, std::uint64_t seed_base, int n_seeds,
                            double eps);

// Full-network check: builds the spec at double precision with randomized
// frozen-BN statistics, takes cross-entropy on a small batch and compares
// analytic vs numeric gradients on n_params sampled parameter entries.
double network_grad_check(const ArchSpec& spec, std::uint64_t seed, int n_params, double eps);

}  // namespace detnet
