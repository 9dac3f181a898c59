#pragma once

#include <string>
#include <vector>

#include "autodiff.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "mpo.hpp"

namespace opdf::distill {

/// Shape-matched (student layer, teacher layer) pair sharing one
/// factorization plan, so the decomposed cores line up one to one.
struct MatchedPair {
  std::size_t student_layer = 0;
  std::size_t teacher_layer = 0;
  mpo::MpoPlan plan;
};

struct LayerMatch {
  std::vector<MatchedPair> pairs;
  std::vector<std::size_t> unmatched_student_layers;
};

/// Maps the s-th decomposable student layer of a weight-shape group onto
/// teacher layer ceil(s*T/S) within the same-shape group. Student layers with
/// no shape-equal teacher layer stay unmatched and are reported.
LayerMatch match_layers(const model::Mlp& student, const model::Mlp& teacher,
                        const std::vector<std::size_t>& student_layers);

/// One matched matrix inside an active graph: the student cores are live
/// graph variables, the teacher cores are frozen constants.
struct AuxPair {
  std::vector<ad::Var> student_cores;
  const mpo::MpoFactors* teacher = nullptr;
};

/// Mean over matched matrices of the mean MSE between corresponding
/// auxiliary cores; central cores are excluded, so their gradients from
/// this term are exactly zero. Matrices whose chain is a single (central)
/// core contribute no term.
ad::Var aux_loss(ad::Graph& g, const std::vector<AuxPair>& pairs);

/// (1 - alpha) * task + alpha * kd + lambda_aux * aux.
ad::Var total_loss(ad::Graph& g, ad::Var task, ad::Var kd, ad::Var aux,
                   double alpha, double lambda_aux);

struct TrainResult {
  model::Mlp net;
  std::vector<harness::MetricsRecord> metrics;
};

/// Supervised cross-entropy training of the teacher architecture for the
/// configured epoch budget; deterministic per seed. With zero epochs the
/// initialized model is returned and its losses reported once.
TrainResult train_teacher(const harness::ExperimentConfig& cfg,
                          const harness::DataSplit& data);

struct EquivalenceCheck {
  std::string stage;  // init | mid | final
  double max_abs_logit_diff = 0.0;
  bool argmax_equal = true;
};

struct DistillRunResult {
  std::vector<harness::MetricsRecord> metrics;
  model::Mlp student_factored;
  model::Mlp student_contracted;
  std::vector<EquivalenceCheck> equivalence;
  std::size_t train_params = 0;      // trainable count during distillation
  std::size_t inference_params = 0;  // contracted count
  long long added_params = 0;        // planned augmentation over all factored layers
  std::size_t matched_layers = 0;
  std::vector<std::string> warnings;
  double best_eval_acc = 0.0;
  std::size_t best_epoch = 0;
};

/// Full distillation procedure: build the student, over-parameterize it per
/// the configured method, decompose matched teacher matrices once as
/// constants, train on the combined objective for the epoch budget with
/// best-eval checkpointing, then contract the student back and verify that
/// factored and contracted forms predict identically.
DistillRunResult distill(const harness::ExperimentConfig& cfg,
                         const model::Mlp& teacher,
                         const harness::DataSplit& data);

}  // namespace opdf::distill
