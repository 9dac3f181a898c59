#include "distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

namespace opdf::distill {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Tensor batch_rows(const Tensor& features, const std::vector<std::size_t>& idx,
                  std::size_t begin, std::size_t end) {
  const std::size_t d = features.extent(1);
  Tensor out({end - begin, d});
  for (std::size_t r = begin; r < end; ++r)
    for (std::size_t c = 0; c < d; ++c)
      out[(r - begin) * d + c] = features[idx[r] * d + c];
  return out;
}

std::vector<std::size_t> batch_labels(const std::vector<std::size_t>& labels,
                                      const std::vector<std::size_t>& idx,
                                      std::size_t begin, std::size_t end) {
  std::vector<std::size_t> out(end - begin);
  for (std::size_t r = begin; r < end; ++r) out[r - begin] = labels[idx[r]];
  return out;
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.below(i)]);
}

model::OptimizerConfig optimizer_config(const harness::DistillSpec& ds,
                                        double learning_rate) {
  model::OptimizerConfig oc;
  oc.kind = ds.optimizer == "sgd" ? model::OptimizerKind::Sgd
                                  : model::OptimizerKind::Adam;
  oc.learning_rate = learning_rate;
  oc.momentum = ds.momentum;
  oc.beta1 = ds.beta1;
  oc.beta2 = ds.beta2;
  oc.epsilon = ds.epsilon;
  return oc;
}

void check_data(const harness::DataSplit& data, std::size_t input_dim,
                std::size_t class_count) {
  require(data.train.size() > 0 && data.eval.size() > 0, ErrKind::EmptyDataset,
          "train and eval tables must be nonempty");
  require(data.train.dim() == input_dim && data.eval.dim() == input_dim,
          ErrKind::DataShapeMismatch, "feature width ", data.train.dim(),
          " != model input_dim ", input_dim);
  for (std::size_t l : data.train.labels)
    require(l < class_count, ErrKind::LabelOutOfRange, "train label ", l,
            " out of range for ", class_count, " classes");
  for (std::size_t l : data.eval.labels)
    require(l < class_count, ErrKind::LabelOutOfRange, "eval label ", l,
            " out of range for ", class_count, " classes");
}

}  // namespace

LayerMatch match_layers(const model::Mlp& student, const model::Mlp& teacher,
                        const std::vector<std::size_t>& student_layers) {
  LayerMatch match;
  using ShapeKey = std::pair<std::size_t, std::size_t>;

  std::map<ShapeKey, std::vector<std::size_t>> teacher_groups;
  for (std::size_t t = 0; t < teacher.layers.size(); ++t)
    teacher_groups[{model::layer_in_dim(teacher.layers[t]),
                    model::layer_out_dim(teacher.layers[t])}]
        .push_back(t);

  std::map<ShapeKey, std::vector<std::size_t>> student_groups;
  for (std::size_t s : student_layers) {
    require(s < student.layers.size(), ErrKind::DataShapeMismatch,
            "student layer index ", s, " out of range");
    student_groups[{model::layer_in_dim(student.layers[s]),
                    model::layer_out_dim(student.layers[s])}]
        .push_back(s);
  }

  for (const auto& [shape, group] : student_groups) {
    auto it = teacher_groups.find(shape);
    if (it == teacher_groups.end()) {
      for (std::size_t s : group) match.unmatched_student_layers.push_back(s);
      continue;
    }
    const auto& tg = it->second;
    const std::size_t S = group.size(), T = tg.size();
    for (std::size_t k = 1; k <= S; ++k) {
      // student k of S -> teacher ceil(k*T/S) of T
      const std::size_t pick = (k * T + S - 1) / S;
      MatchedPair p;
      p.student_layer = group[k - 1];
      p.teacher_layer = tg[pick - 1];
      match.pairs.push_back(std::move(p));
    }
  }
  std::sort(match.pairs.begin(), match.pairs.end(),
            [](const MatchedPair& a, const MatchedPair& b) {
              return a.student_layer < b.student_layer;
            });
  std::sort(match.unmatched_student_layers.begin(),
            match.unmatched_student_layers.end());
  return match;
}

ad::Var aux_loss(ad::Graph& g, const std::vector<AuxPair>& pairs) {
  ad::Var acc;  // running sum over matrices that contribute a term
  std::size_t contributing = 0;
  for (const AuxPair& pair : pairs) {
    require(pair.teacher != nullptr, ErrKind::PlanMismatch,
            "aux pair without teacher factors");
    const std::size_t n = pair.student_cores.size();
    require(n == pair.teacher->cores.size(), ErrKind::PlanMismatch,
            "student chain has ", n, " cores, teacher has ",
            pair.teacher->cores.size());

    std::vector<Tensor> student_shapes_probe;
    for (std::size_t k = 0; k < n; ++k) {
      const Tensor& sv = g.value(pair.student_cores[k]);
      require(sv.shape() == pair.teacher->cores[k].shape(),
              ErrKind::PlanMismatch, "core ", k + 1, " shapes differ: ",
              shape_str(sv.shape()), " vs ",
              shape_str(pair.teacher->cores[k].shape()));
      student_shapes_probe.push_back(Tensor(sv.shape()));
    }
    const std::size_t central = mpo::pick_central_index(student_shapes_probe);
    require(central == pair.teacher->central_index, ErrKind::PlanMismatch,
            "central core disagreement between student and teacher chains");

    if (n <= 1) continue;  // single-core chains have no auxiliary tensors

    ad::Var matrix_term;
    bool first = true;
    for (std::size_t k = 0; k < n; ++k) {
      if (k + 1 == central) continue;
      ad::Var term = g.mse_loss(pair.student_cores[k],
                                g.constant(pair.teacher->cores[k]));
      matrix_term = first ? term : g.add(matrix_term, term);
      first = false;
    }
    matrix_term = g.scalar_mul(matrix_term, 1.0 / static_cast<double>(n - 1));
    acc = contributing == 0 ? matrix_term : g.add(acc, matrix_term);
    ++contributing;
  }
  if (contributing == 0) return g.constant(Tensor::scalar(0.0));
  return g.scalar_mul(acc, 1.0 / static_cast<double>(contributing));
}

ad::Var total_loss(ad::Graph& g, ad::Var task, ad::Var kd, ad::Var aux,
                   double alpha, double lambda_aux) {
  return g.add(g.add(g.scalar_mul(task, 1.0 - alpha), g.scalar_mul(kd, alpha)),
               g.scalar_mul(aux, lambda_aux));
}

TrainResult train_teacher(const harness::ExperimentConfig& cfg,
                          const harness::DataSplit& data) {
  Rng64 root(cfg.seed);
  Rng64 init_rng = root.substream("teacher-init");
  Rng64 shuffle_rng = root.substream("teacher-shuffle");

  TrainResult result;
  result.net = model::build_mlp(
      data.train.dim(), cfg.teacher.hidden, data.train.class_count,
      model::activation_from_name(cfg.teacher.activation), init_rng);
  check_data(data, result.net.input_dim, result.net.class_count);

  model::SgdAdamState opt(
      optimizer_config(cfg.distill, cfg.teacher.learning_rate));

  const std::size_t n = data.train.size();
  const std::size_t bs = std::min<std::size_t>(cfg.distill.batch_size, n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;

  const auto run_start = Clock::now();
  if (cfg.teacher.epochs == 0) {
    // report once without training
    ad::Graph g;
    ad::Var logits = model::forward(g, result.net, data.train.features, nullptr);
    const double loss = g.value(g.softmax_ce_loss(logits, data.train.labels))[0];
    harness::MetricsRecord rec;
    rec.epoch = 0;
    rec.task_loss = rec.total_loss = loss;
    rec.train_acc = model::accuracy(result.net, data.train.features,
                                    data.train.labels);
    rec.eval_acc =
        model::accuracy(result.net, data.eval.features, data.eval.labels);
    rec.wall_ms = ms_since(run_start);
    rec.seed = cfg.seed;
    result.metrics.push_back(rec);
    return result;
  }

  for (std::size_t epoch = 1; epoch <= cfg.teacher.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    shuffle_indices(idx, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(begin + bs, n);
      Tensor xb = batch_rows(data.train.features, idx, begin, end);
      auto yb = batch_labels(data.train.labels, idx, begin, end);

      ad::Graph g;
      std::vector<model::ParamBinding> bindings;
      ad::Var logits = model::forward(g, result.net, xb, &bindings);
      ad::Var loss = g.softmax_ce_loss(logits, yb);
      g.backward(loss);

      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      for (auto& b : bindings) {
        params.push_back(b.master);
        grads.push_back(&g.grad(b.var));
      }
      opt.step(params, grads);
      loss_sum += g.value(loss)[0] * static_cast<double>(end - begin);
    }
    harness::MetricsRecord rec;
    rec.epoch = epoch;
    rec.task_loss = rec.total_loss = loss_sum / static_cast<double>(n);
    rec.train_acc =
        model::accuracy(result.net, data.train.features, data.train.labels);
    rec.eval_acc =
        model::accuracy(result.net, data.eval.features, data.eval.labels);
    rec.wall_ms = ms_since(epoch_start);
    rec.seed = cfg.seed;
    require(std::isfinite(rec.task_loss), ErrKind::ConvergenceFailure,
            "teacher training diverged at epoch ", epoch);
    result.metrics.push_back(rec);
  }
  return result;
}

namespace {

EquivalenceCheck check_equivalence(const model::Mlp& factored,
                                   const Tensor& eval_x,
                                   const std::string& stage) {
  EquivalenceCheck c;
  c.stage = stage;
  model::Mlp contracted = model::contract_model(factored);
  const Tensor lf = model::predict_logits(factored, eval_x);
  const Tensor lc = model::predict_logits(contracted, eval_x);
  c.max_abs_logit_diff = max_abs_diff(lf, lc);
  c.argmax_equal = model::argmax_rows(lf) == model::argmax_rows(lc);
  return c;
}

}  // namespace

DistillRunResult distill(const harness::ExperimentConfig& cfg,
                         const model::Mlp& teacher,
                         const harness::DataSplit& data) {
  const harness::DistillSpec& ds = cfg.distill;
  Rng64 root(cfg.seed);
  Rng64 init_rng = root.substream("student-init");
  Rng64 shuffle_rng = root.substream("student-shuffle");

  check_data(data, teacher.input_dim, teacher.class_count);

  DistillRunResult result;

  // 1. build the student, then over-parameterize it per the method
  model::Mlp student = model::build_mlp(
      data.train.dim(), cfg.student.hidden, data.train.class_count,
      model::activation_from_name(cfg.student.activation), init_rng);
  const std::size_t base_params = model::trainable_param_count(student);

  std::vector<std::size_t> factored_layers;
  if (cfg.method == "opdf") {
    student = model::overparameterize(student, ds.schemes, std::nullopt,
                                      ds.rebalance_cores);
    for (const model::LayerScheme& s : ds.schemes)
      factored_layers.push_back(s.layer);
    std::sort(factored_layers.begin(), factored_layers.end());
    for (const model::LayerScheme& s : ds.schemes) {
      mpo::MpoPlan plan =
          mpo::plan(model::layer_in_dim(student.layers[s.layer]),
                    model::layer_out_dim(student.layers[s.layer]), s.in_dims,
                    s.out_dims, s.bond_cap);
      result.added_params += mpo::added_params(plan);
    }
  } else if (cfg.method == "svd-op") {
    for (std::size_t l = 0; l < student.layers.size(); ++l) {
      auto& plain = std::get<model::LinearLayer>(student.layers[l]);
      model::FactoredLinearLayer fac;
      fac.factors = mpo::svd_overparam_factors(plain.weight);
      fac.bias = plain.bias;
      fac.activation = plain.activation;
      result.added_params += mpo::added_params(fac.factors.plan);
      student.layers[l] = std::move(fac);
      factored_layers.push_back(l);
    }
  }
  result.train_params = model::trainable_param_count(student);

  // 2. match factored student layers to shape-equal teacher layers and
  // decompose the matched teacher matrices once, as frozen constants
  LayerMatch match;
  std::map<std::size_t, mpo::MpoFactors> teacher_factors;  // by student layer
  if (ds.lambda_aux > 0.0 && !factored_layers.empty()) {
    match = match_layers(student, teacher, factored_layers);
    for (MatchedPair& pair : match.pairs) {
      const auto& tl = std::get<model::LinearLayer>(
          teacher.layers[pair.teacher_layer]);
      const auto& sl = std::get<model::FactoredLinearLayer>(
          student.layers[pair.student_layer]);
      pair.plan = sl.factors.plan;
      teacher_factors[pair.student_layer] =
          cfg.method == "svd-op"
              ? mpo::svd_overparam_factors(tl.weight)
              : mpo::decompose(tl.weight, pair.plan, std::nullopt,
                               ds.rebalance_cores);
    }
    for (std::size_t s : match.unmatched_student_layers)
      result.warnings.push_back(
          "student layer " + std::to_string(s) +
          " has no shape-equal teacher layer; it trains without an aux term");
    if (match.pairs.empty()) {
      if (ds.strict_aux)
        fail(ErrKind::NoMatchableLayers,
             "lambda_aux > 0 but no student layer matches a teacher layer");
      result.warnings.push_back(
          "no student layer matches a teacher layer; aux loss is zero for "
          "this run");
    }
  }
  result.matched_layers = match.pairs.size();

  // 3. minibatch training on the combined objective
  model::SgdAdamState opt(optimizer_config(ds, ds.learning_rate));
  const std::size_t n = data.train.size();
  const std::size_t bs = std::min<std::size_t>(ds.batch_size, n);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;

  result.equivalence.push_back(
      check_equivalence(student, data.eval.features, "init"));

  model::Mlp best = student;
  double best_eval = -1.0;
  std::size_t best_epoch = 0;
  const std::size_t mid_epoch = (ds.epochs + 1) / 2;

  for (std::size_t epoch = 1; epoch <= ds.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    shuffle_indices(idx, shuffle_rng);
    double task_sum = 0.0, kd_sum = 0.0, aux_sum = 0.0, total_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += bs) {
      const std::size_t end = std::min(begin + bs, n);
      const double bn = static_cast<double>(end - begin);
      Tensor xb = batch_rows(data.train.features, idx, begin, end);
      auto yb = batch_labels(data.train.labels, idx, begin, end);
      const Tensor teacher_logits = model::predict_logits(teacher, xb);

      ad::Graph g;
      std::vector<model::ParamBinding> bindings;
      std::vector<model::LayerVars> layer_vars;
      ad::Var logits = model::forward(g, student, xb, &bindings, &layer_vars);
      ad::Var task = g.softmax_ce_loss(logits, yb);
      ad::Var kd = g.kl_distill_loss(logits, teacher_logits, ds.temperature);

      std::vector<AuxPair> aux_pairs;
      for (const MatchedPair& pair : match.pairs) {
        AuxPair ap;
        ap.student_cores = layer_vars[pair.student_layer].cores;
        ap.teacher = &teacher_factors.at(pair.student_layer);
        aux_pairs.push_back(std::move(ap));
      }
      ad::Var aux = aux_loss(g, aux_pairs);
      ad::Var total = total_loss(g, task, kd, aux, ds.alpha, ds.lambda_aux);
      g.backward(total);

      std::vector<Tensor*> params;
      std::vector<const Tensor*> grads;
      for (auto& b : bindings) {
        params.push_back(b.master);
        grads.push_back(&g.grad(b.var));
      }
      opt.step(params, grads);

      task_sum += g.value(task)[0] * bn;
      kd_sum += g.value(kd)[0] * bn;
      aux_sum += g.value(aux)[0] * bn;
      total_sum += g.value(total)[0] * bn;
    }

    harness::MetricsRecord rec;
    rec.epoch = epoch;
    rec.task_loss = task_sum / static_cast<double>(n);
    rec.kd_loss = kd_sum / static_cast<double>(n);
    rec.aux_loss = aux_sum / static_cast<double>(n);
    rec.total_loss = total_sum / static_cast<double>(n);
    rec.train_acc =
        model::accuracy(student, data.train.features, data.train.labels);
    rec.eval_acc =
        model::accuracy(student, data.eval.features, data.eval.labels);
    rec.wall_ms = ms_since(epoch_start);
    rec.seed = cfg.seed;
    require(std::isfinite(rec.total_loss), ErrKind::ConvergenceFailure,
            "distillation diverged at epoch ", epoch);
    result.metrics.push_back(rec);

    if (rec.eval_acc > best_eval) {
      best_eval = rec.eval_acc;
      best_epoch = epoch;
      best = student;
    }
    if (epoch == mid_epoch)
      result.equivalence.push_back(
          check_equivalence(student, data.eval.features, "mid"));
  }

  if (ds.epochs == 0) {
    best = student;
    best_eval = model::accuracy(student, data.eval.features, data.eval.labels);
  }

  // 4. contract the best checkpoint and verify both forms agree
  result.student_factored = std::move(best);
  result.student_contracted = model::contract_model(result.student_factored);
  result.equivalence.push_back(check_equivalence(
      result.student_factored, data.eval.features, "final"));

  const auto pred_f = model::argmax_rows(
      model::predict_logits(result.student_factored, data.eval.features));
  const auto pred_c = model::argmax_rows(
      model::predict_logits(result.student_contracted, data.eval.features));
  require(pred_f == pred_c, ErrKind::ConvergenceFailure,
          "contracted student disagrees with the factored student");

  result.inference_params =
      model::trainable_param_count(result.student_contracted);
  require(result.inference_params == base_params, ErrKind::ConvergenceFailure,
          "contraction changed the parameter count");
  result.best_eval_acc = best_eval;
  result.best_epoch = best_epoch;
  return result;
}

}  // namespace opdf::distill
