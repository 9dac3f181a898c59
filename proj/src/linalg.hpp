#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "tensor.hpp"

namespace opdf::linalg {

/// Thin SVD m = u * diag(s) * vt with r = min(rows, cols).
/// u is rows x r with orthonormal columns, s is nonincreasing and
/// nonnegative, vt is r x cols with orthonormal rows. Deterministic: each
/// (u column, vt row) pair is oriented so the largest-magnitude entry of the
/// u column is positive (ties broken by lowest row index).
struct SvdResult {
  Tensor u;
  std::vector<double> s;
  Tensor vt;

  Tensor reconstruct() const;
};

/// Rank-truncated SVD. epsilon = sqrt(sum of squared discarded singular
/// values), so ||m - kept reconstruction||_F == epsilon (Eckart-Young).
struct TruncatedSvd {
  SvdResult kept;
  double epsilon = 0.0;
  std::size_t kept_rank = 0;
};

/// One-sided Jacobi SVD. Throws ConvergenceFailure if the relative
/// off-diagonal criterion 1e-12 is not met within the sweep cap.
SvdResult svd(const Tensor& m);

/// Keeps the smallest rank satisfying the given constraints:
///   - kept_rank <= max_rank when max_rank is given;
///   - tail sqrt(sum of discarded s^2) <= tol when tol is given (grown until
///     satisfied, at most to full rank);
/// and always drops singular values at numerical-zero level
/// (s <= s_max * max(rows, cols) * machine epsilon). At least one singular
/// value is kept so downstream bond extents stay >= 1.
TruncatedSvd truncated_svd(const Tensor& m,
                           std::optional<std::size_t> max_rank,
                           std::optional<double> tol);

}  // namespace opdf::linalg
