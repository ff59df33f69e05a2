#include "zutis/training.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "zutis/error.hpp"
#include "zutis/io.hpp"
#include "zutis/losses.hpp"

namespace zutis {

// ---------------------------------------------------------------- targets

TrainingTarget make_training_target(const PseudoSample& sample, int h, int w) {
  sample.validate();
  TrainingTarget t;
  const LabelMap inst = resize_nearest(sample.instance_map, h, w);
  t.semantic = LabelMap(h, w, 0);
  for (const auto& [id, cat] : sample.instance_categories) {
    BinaryMask m(h, w, 0);
    long n = 0;
    for (std::size_t i = 0; i < inst.size(); ++i) {
      if (inst[i] == id) {
        m[i] = 1;
        t.semantic[i] = cat;
        ++n;
      }
    }
    if (n == 0) continue;
    t.masks.push_back(std::move(m));
    t.categories.push_back(cat);
  }
  return t;
}

// ---------------------------------------------------------------- losses

CostMatrix matching_cost(const Matrix& masks, std::span<const BinaryMask> gts) {
  if (gts.empty()) throw ArgumentError("matching_cost: no ground-truth masks");
  const Eigen::Index n = masks.cols();
  std::vector<std::vector<double>> targets;
  for (const auto& g : gts) {
    if (static_cast<Eigen::Index>(g.size()) != n) throw ArgumentError("matching_cost: mask size differs from proposals");
    if (count_foreground(g) == 0) throw ArgumentError("matching_cost: empty ground-truth mask");
    targets.emplace_back(g.values().begin(), g.values().end());
  }
  CostMatrix cost(masks.rows(), static_cast<Eigen::Index>(gts.size()));
  std::vector<double> p(static_cast<std::size_t>(n));
  for (Eigen::Index q = 0; q < masks.rows(); ++q) {
    for (Eigen::Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = masks(q, i);
    for (std::size_t g = 0; g < targets.size(); ++g) {
      cost(q, static_cast<Eigen::Index>(g)) =
          dice_loss<double>(p, targets[g]) + bce_mask_loss<double>(p, targets[g]);
    }
  }
  return cost;
}

CostMatrix matching_cost(const MaskProposalSet& proposals, std::span<const BinaryMask> gts) {
  return matching_cost(proposals.masks, gts);
}

MaskLossTerm mask_loss(const Var& logits, std::span<const BinaryMask> gts, const Assignment& assignment) {
  MaskLossTerm out;
  if (assignment.pairs.empty()) {
    out.loss = ag::constant(Matrix::Zero(1, 1));
    return out;
  }
  const Eigen::Index n = logits.cols();
  const auto& x = logits.value();
  const double inv_pairs = 1.0 / static_cast<double>(assignment.pairs.size());
  Matrix grad = Matrix::Zero(logits.rows(), n);
  std::vector<double> p(static_cast<std::size_t>(n)), t(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n)),
      dg(static_cast<std::size_t>(n));
  for (const auto& [q, g] : assignment.pairs) {
    if (q < 0 || q >= logits.rows() || g < 0 || g >= static_cast<int>(gts.size())) {
      throw ArgumentError("mask_loss: assignment out of range");
    }
    const auto& gt = gts[static_cast<std::size_t>(g)];
    if (static_cast<Eigen::Index>(gt.size()) != n) throw ArgumentError("mask_loss: mask size differs from proposals");
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      z[k] = x(q, i);
      p[k] = sigmoid<double>(z[k]);
      t[k] = gt[k];
    }
    const double d = dice_loss_grad<double>(p, t, dg);
    const double b = bce_with_logits<double>(z, t);
    out.dice += d * inv_pairs;
    out.bce += b * inv_pairs;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double dz = dg[k] * p[k] * (1.0 - p[k]) + (p[k] - t[k]) / static_cast<double>(n);
      grad(q, i) += static_cast<float>(dz * inv_pairs);
    }
  }
  Matrix value(1, 1);
  value(0, 0) = static_cast<float>(out.dice + out.bce);
  out.loss = ag::make_op(std::move(value), {logits}, [grad = std::move(grad)](ag::Node& self) {
    self.inputs[0]->accumulate(grad * self.grad(0, 0));
  });
  return out;
}

Var semantic_ce(const Var& logits, std::span<const int> targets) {
  const Eigen::Index rows = logits.rows(), cls = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != rows) throw ArgumentError("semantic_ce: target count differs");
  if (rows == 0) return ag::constant(Matrix::Zero(1, 1));
  Matrix probs = logits.value();
  double acc = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= cls) throw ArgumentError("semantic_ce: target index out of range");
    auto row = probs.row(r);
    const float mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    const float s = row.sum();
    row /= s;
    acc -= static_cast<double>(logits.value()(r, t) - mx) - std::log(static_cast<double>(s));
  }
  Matrix value(1, 1);
  value(0, 0) = static_cast<float>(acc / static_cast<double>(rows));
  std::vector<int> tgt(targets.begin(), targets.end());
  return ag::make_op(std::move(value), {logits}, [probs = std::move(probs), tgt = std::move(tgt)](ag::Node& self) {
    Matrix g = probs;
    for (std::size_t r = 0; r < tgt.size(); ++r) g(static_cast<Eigen::Index>(r), tgt[r]) -= 1.0f;
    self.inputs[0]->accumulate(g * (self.grad(0, 0) / static_cast<float>(tgt.size())));
  });
}

double LossReport::mask_sum() const { return l_mask + std::accumulate(aux.begin(), aux.end(), 0.0); }

LossReport total_loss(double l_ce, double l_dice, double l_bce, const std::array<double, kAuxLayers>& aux,
                      double lambda_mask) {
  LossReport r;
  r.l_ce = l_ce;
  r.l_dice = l_dice;
  r.l_bce = l_bce;
  r.l_mask = l_dice + l_bce;
  r.aux = aux;
  r.total = l_ce + lambda_mask * r.mask_sum();
  return r;
}

SampleLoss sample_loss(const SegmenterOutput& out, const TextBank& bank, const TrainingTarget& target,
                       const LossConfig& cfg) {
  std::vector<Var> terms;
  std::vector<float> weights;
  double l_ce = 0.0;
  if (cfg.semantic) {
    Var ce = semantic_ce(semantic_logits(out.projected, bank), target.semantic.values());
    l_ce = ce.value()(0, 0);
    terms.push_back(ce);
    weights.push_back(1.0f);
  }

  SampleLoss res;
  std::array<double, kAuxLayers> aux{};
  double dice = 0.0, bce = 0.0;
  const bool have = !target.masks.empty();
  if (cfg.masks && have) {
    const auto& p = out.proposals;
    res.assignment = hungarian_match(matching_cost(sigmoid_masks(p.final_logits.value()), target.masks));
    MaskLossTerm fin = mask_loss(p.final_logits, target.masks, res.assignment);
    dice = fin.dice;
    bce = fin.bce;
    terms.push_back(fin.loss);
    weights.push_back(static_cast<float>(cfg.lambda_mask));
    for (int i = 0; i < kAuxLayers; ++i) {
      const auto& logits = p.aux_logits[static_cast<std::size_t>(i)];
      const Assignment a =
          cfg.rematch_aux ? hungarian_match(matching_cost(sigmoid_masks(logits.value()), target.masks)) : res.assignment;
      MaskLossTerm t = mask_loss(logits, target.masks, a);
      aux[static_cast<std::size_t>(i)] = t.dice + t.bce;
      terms.push_back(t.loss);
      weights.push_back(static_cast<float>(cfg.lambda_mask));
    }
  }
  res.report = total_loss(l_ce, dice, bce, aux, cfg.masks ? cfg.lambda_mask : 0.0);
  res.report.no_instances = !have;
  res.total = terms.empty() ? ag::constant(Matrix::Zero(1, 1)) : ag::weighted_sum(terms, weights);
  return res;
}

// ---------------------------------------------------------------- optimizer

double poly_lr(double base, int iter, int max_iter, double power) {
  if (max_iter <= 0 || iter >= max_iter) return 0.0;
  if (iter <= 0) return base;
  return base * std::pow(1.0 - static_cast<double>(iter) / max_iter, power);
}

AdamW::AdamW(std::vector<NamedParameter> params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    state_[p.name] = {Matrix::Zero(p.var.rows(), p.var.cols()), Matrix::Zero(p.var.rows(), p.var.cols())};
  }
}

double AdamW::lr_at(int iter, ParamGroup g) const {
  return poly_lr(g == ParamGroup::kEncoder ? cfg_.encoder_lr : cfg_.lr, iter, cfg_.max_iter, cfg_.poly_power);
}

double AdamW::step(int iter) {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (p.var.node().has_grad()) sq += p.var.grad().cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = cfg_.grad_clip > 0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;

  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (const auto& p : params_) {
    if (!p.var.node().has_grad()) continue;
    const double lr = lr_at(iter, p.group);
    auto& st = state_.at(p.name);
    const Matrix g = p.var.grad() * static_cast<float>(clip);
    st.m = static_cast<float>(cfg_.beta1) * st.m + static_cast<float>(1.0 - cfg_.beta1) * g;
    st.v = static_cast<float>(cfg_.beta2) * st.v + static_cast<float>(1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Var v = p.var;
    Matrix& w = v.mutable_value();
    if (p.decay) w *= static_cast<float>(1.0 - lr * cfg_.weight_decay);
    const auto denom = (st.v.array() / static_cast<float>(bc2)).sqrt() + static_cast<float>(cfg_.eps);
    w.array() -= static_cast<float>(lr) * (st.m.array() / static_cast<float>(bc1)) / denom;
  }
  return norm;
}

void AdamW::load_state(std::map<std::string, AdamState> state, long steps) {
  for (const auto& p : params_) {
    auto it = state.find(p.name);
    if (it == state.end()) throw DataError("optimizer state lacks " + p.name);
    if (it->second.m.rows() != p.var.rows() || it->second.m.cols() != p.var.cols()) {
      throw DataError("optimizer state shape mismatch for " + p.name);
    }
  }
  state_ = std::move(state);
  steps_ = steps;
}

// ---------------------------------------------------------------- checkpoint

namespace {

template <typename T>
void put(std::ostream& o, const T& v) {
  o.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError("truncated checkpoint");
  return v;
}

void put_string(std::ostream& o, const std::string& s) {
  put<std::uint64_t>(o, s.size());
  o.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint64_t>(in);
  if (n > (1u << 28)) throw DataError("corrupt checkpoint string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw DataError("truncated checkpoint");
  return s;
}

void put_matrix(std::ostream& o, const Matrix& m) {
  put<std::int32_t>(o, static_cast<std::int32_t>(m.rows()));
  put<std::int32_t>(o, static_cast<std::int32_t>(m.cols()));
  o.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

Matrix get_matrix(std::istream& in) {
  const auto r = get<std::int32_t>(in);
  const auto c = get<std::int32_t>(in);
  if (r < 0 || c < 0 || static_cast<long>(r) * c > (1L << 28)) throw DataError("corrupt checkpoint matrix shape");
  Matrix m(r, c);
  in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  if (!in) throw DataError("truncated checkpoint");
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream o(tmp, std::ios::binary);
    if (!o) throw IoError("cannot write checkpoint " + path.string());
    o.write(kCheckpointMagic, 8);
    put<std::uint32_t>(o, kCheckpointVersion);
    put_string(o, ckpt.config_json);
    put<std::int64_t>(o, ckpt.iteration);
    put<std::uint64_t>(o, ckpt.seed);
    put<std::uint64_t>(o, ckpt.params.size());
    for (const auto& [name, m] : ckpt.params) {
      put_string(o, name);
      put_matrix(o, m);
    }
    put<std::int64_t>(o, ckpt.adam_steps);
    put<std::uint64_t>(o, ckpt.adam.size());
    for (const auto& [name, st] : ckpt.adam) {
      put_string(o, name);
      put_matrix(o, st.m);
      put_matrix(o, st.v);
    }
    if (!o) throw IoError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) throw DataError("not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint c;
  c.config_json = get_string(in);
  c.iteration = static_cast<int>(get<std::int64_t>(in));
  c.seed = get<std::uint64_t>(in);
  const auto np = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < np; ++i) {
    std::string name = get_string(in);
    c.params.emplace(std::move(name), get_matrix(in));
  }
  c.adam_steps = static_cast<long>(get<std::int64_t>(in));
  const auto na = get<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < na; ++i) {
    std::string name = get_string(in);
    AdamState st;
    st.m = get_matrix(in);
    st.v = get_matrix(in);
    c.adam.emplace(std::move(name), std::move(st));
  }
  return c;
}

// ---------------------------------------------------------------- trainer

Trainer::Trainer(Segmenter& model, const TextBank& bank, TrainConfig cfg)
    : model_(model), bank_(bank), cfg_(cfg), opt_(model.parameters(), [&] {
        OptimConfig o = cfg.optim;
        o.max_iter = cfg.iterations;
        return o;
      }()) {
  if (cfg.batch_size < 1) throw ArgumentError("batch size must be >= 1");
  if (cfg.iterations < 1) throw ArgumentError("iterations must be >= 1");
}

LossReport Trainer::step(std::span<const PseudoSample> batch) {
  if (batch.empty()) throw ArgumentError("empty training batch");
  model_.zero_grad();
  LossReport mean;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    SegmenterOutput out = model_.forward(sample.image);
    const TrainingTarget target = make_training_target(sample, out.feats.h, out.feats.w);
    SampleLoss sl = sample_loss(out, bank_, target, cfg_.loss);
    if (!std::isfinite(sl.report.total)) {
      if (!dump_dir_.empty()) {
        std::filesystem::create_directories(dump_dir_);
        for (std::size_t i = 0; i < batch.size(); ++i) {
          write_pseudo_sample(dump_dir_, "batch_" + std::to_string(i), batch[i], bank_.names(), "");
        }
      }
      throw NumericError("non-finite loss at iteration " + std::to_string(iteration_) +
                         (dump_dir_.empty() ? std::string() : "; batch dumped to " + dump_dir_.string()));
    }
    ag::backward(ag::scale(sl.total, static_cast<float>(inv)));
    mean.total += sl.report.total * inv;
    mean.l_ce += sl.report.l_ce * inv;
    mean.l_mask += sl.report.l_mask * inv;
    mean.l_dice += sl.report.l_dice * inv;
    mean.l_bce += sl.report.l_bce * inv;
    for (std::size_t i = 0; i < mean.aux.size(); ++i) mean.aux[i] += sl.report.aux[i] * inv;
    mean.no_instances = mean.no_instances || sl.report.no_instances;
  }
  opt_.step(iteration_);
  ++iteration_;
  return mean;
}

void Trainer::run(const BatchFn& batches, const std::function<void(const TrainLogRecord&)>& on_log,
                  const std::function<void(int)>& on_checkpoint) {
  const auto start = std::chrono::steady_clock::now();
  while (iteration_ < cfg_.iterations) {
    const int it = iteration_;
    const auto batch = batches(it);
    const double lr = opt_.lr_at(it, ParamGroup::kHead);
    LossReport r = step(batch);
    if (on_log && cfg_.log_interval > 0 && iteration_ % cfg_.log_interval == 0) {
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      on_log({iteration_, lr, r, wall});
    }
    if (on_checkpoint && cfg_.checkpoint_interval > 0 && iteration_ % cfg_.checkpoint_interval == 0 &&
        iteration_ != cfg_.iterations) {
      on_checkpoint(iteration_);
    }
  }
  if (on_checkpoint) on_checkpoint(iteration_);
}

}  // namespace zutis
