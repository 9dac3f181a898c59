#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace opdf::mpo {

/// Factorization scheme for one I x J matrix: the row extents factor into
/// in_dims, the column extents into out_dims, and bond_dims holds the n+1
/// bond extents with bond_dims[0] == bond_dims[n] == 1. Interior bonds are
/// min(prod of leading i_k*j_k pairs, prod of trailing pairs), clamped to
/// bond_cap when set.
struct MpoPlan {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> in_dims;
  std::vector<std::size_t> out_dims;
  std::vector<std::size_t> bond_dims;
  std::optional<std::size_t> bond_cap;

  std::size_t core_count() const { return in_dims.size(); }
};

MpoPlan plan(std::size_t rows, std::size_t cols,
             std::vector<std::size_t> in_dims, std::vector<std::size_t> out_dims,
             std::optional<std::size_t> bond_cap = std::nullopt);

/// Total trainable element count of the planned cores:
/// sum_k i_k * j_k * d_{k-1} * d_k.
std::size_t planned_params(const MpoPlan& p);

/// Parameter augmentation of the planned factorization relative to the
/// source matrix (may be negative under aggressive bond caps).
long long added_params(const MpoPlan& p);

/// Ordered chain of 4-order cores [d_{k-1}, i_k, j_k, d_k]. Actual bond
/// extents can fall below the plan for rank-deficient or tol-truncated
/// inputs; consumers read extents from the cores. central_index is 1-based:
/// the core with the maximal element count, ties broken by the lower index.
struct MpoFactors {
  std::vector<Tensor> cores;
  MpoPlan plan;
  std::vector<double> truncation;  // per-split epsilon_k, length n-1
  std::size_t central_index = 1;
};

std::size_t pick_central_index(const std::vector<Tensor>& cores);

/// Sequential-SVD sweep: reshape to (i_1..i_n, j_1..j_n), interleave to
/// (i_1, j_1, ..., i_n, j_n), then split off one core per step with a
/// truncated SVD at the planned bond (optionally tightened by tol); the
/// final carry becomes core n. When rebalance is set, cores are rescaled to
/// a common Frobenius norm without changing the chain product.
MpoFactors decompose(const Tensor& w, const MpoPlan& plan,
                     std::optional<double> tol = std::nullopt,
                     bool rebalance = false);

/// Contracts the chain over shared bonds and restores the [rows, cols]
/// matrix layout.
Tensor reconstruct(const MpoFactors& f);

/// sqrt(sum of squared per-split truncation errors): the upper bound on
/// ||W - reconstruct||_F.
double error_bound(const MpoFactors& f);

struct CoreSplit {
  Tensor central;
  std::size_t central_index = 1;                        // 1-based
  std::vector<std::pair<std::size_t, Tensor>> auxiliary;  // (1-based index, core)
};

CoreSplit split_cores(const MpoFactors& f);

/// Full-SVD two-factor split W = A * B with the singular values divided
/// evenly: A = U sqrt(S), B = sqrt(S) V^T.
std::pair<Tensor, Tensor> svd_overparam(const Tensor& w);

/// The same split packaged as a two-core chain [1, I, 1, r], [r, 1, J, 1] so
/// the factored-layer machinery can train and contract it uniformly.
MpoFactors svd_overparam_factors(const Tensor& w);

// -- bundle persistence ----------------------------------------------------
//
// A bundle is a directory holding manifest.json (source_shape, in_dims,
// out_dims, actual bond_dims, central_index, truncation, ordered core file
// names) plus one TNSR file per core.

void write_bundle(const std::string& dir, const MpoFactors& f);
MpoFactors read_bundle(const std::string& dir);

}  // namespace opdf::mpo
