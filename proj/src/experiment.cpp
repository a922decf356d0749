// SPDX-License-Identifier: Apache-2.0
#include "loradyn/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <set>
#include <sstream>

#include "loradyn/csv.hpp"
#include "loradyn/error.hpp"
#include "loradyn/optim.hpp"
#include "parallel.hpp"

namespace loradyn {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_strings(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::string trim(std::string s) {
  const char* ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  auto e = s.find_last_not_of(ws);
  s.erase(e == std::string::npos ? 0 : e + 1);
  return s;
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "config key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  long long x = to_int(key, v);
  if (x < 0) fail(ErrorCode::InvalidArgument, "config key '" + key + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

double to_real(const std::string& key, const std::string& v) {
  try {
    double x = parse_double(v);
    if (!std::isfinite(x)) throw std::invalid_argument("non-finite");
    return x;
  } catch (const std::exception&) {
    fail(ErrorCode::InvalidArgument, "config key '" + key + "': expected a number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(ErrorCode::InvalidArgument, "config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  for (auto& item : split(v, ',')) {
    std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

struct Binding {
  const char* key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

#define LD_STR(name) \
  Binding { #name, [](const ExperimentConfig& c) { return c.name; }, [](ExperimentConfig& c, const std::string& v) { c.name = v; } }
#define LD_INT(name)                                                                      \
  Binding {                                                                               \
    #name, [](const ExperimentConfig& c) { return std::to_string(c.name); },              \
        [](ExperimentConfig& c, const std::string& v) { c.name = static_cast<decltype(c.name)>(to_int(#name, v)); } \
  }
#define LD_SIZE(name) \
  Binding { #name, [](const ExperimentConfig& c) { return std::to_string(c.name); }, [](ExperimentConfig& c, const std::string& v) { c.name = to_count(#name, v); } }
#define LD_REAL(name) \
  Binding { #name, [](const ExperimentConfig& c) { return format_double(c.name); }, [](ExperimentConfig& c, const std::string& v) { c.name = to_real(#name, v); } }
#define LD_BOOL(name) \
  Binding { #name, [](const ExperimentConfig& c) { return std::string(c.name ? "true" : "false"); }, [](ExperimentConfig& c, const std::string& v) { c.name = to_bool(#name, v); } }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = {
      LD_STR(phase),
      Binding{"seed", [](const ExperimentConfig& c) { return std::to_string(c.seed); },
              [](ExperimentConfig& c, const std::string& v) {
                try {
                  std::size_t pos = 0;
                  c.seed = std::stoull(v, &pos);
                  if (pos != v.size()) throw std::invalid_argument("trailing");
                } catch (const std::exception&) {
                  fail(ErrorCode::InvalidArgument, "config key 'seed': expected an unsigned integer, got '" + v + "'");
                }
              }},
      LD_STR(out),
      LD_INT(threads),
      LD_SIZE(d),
      LD_SIZE(n),
      LD_SIZE(r),
      LD_SIZE(classes),
      LD_REAL(scale),
      LD_INT(pretrain_steps),
      LD_REAL(pretrain_lr),
      LD_SIZE(batch),
      LD_INT(log_every),
      LD_STR(optimizer),
      LD_INT(finetune_steps),
      Binding{"lrs", [](const ExperimentConfig& c) { return join_doubles(c.lrs); },
              [](ExperimentConfig& c, const std::string& v) {
                c.lrs.clear();
                for (auto& s : to_list(v)) c.lrs.push_back(to_real("lrs", s));
              }},
      Binding{"init_sizes", [](const ExperimentConfig& c) { return join_doubles(c.init_sizes); },
              [](ExperimentConfig& c, const std::string& v) {
                c.init_sizes.clear();
                for (auto& s : to_list(v)) c.init_sizes.push_back(to_real("init_sizes", s));
              }},
      LD_STR(init_param),
      Binding{"schemes", [](const ExperimentConfig& c) { return join_strings(c.schemes); },
              [](ExperimentConfig& c, const std::string& v) {
                c.schemes.clear();
                for (auto& s : to_list(v)) c.schemes.push_back(init_kind_name(parse_init_kind(s)));
              }},
      LD_INT(seeds),
      LD_BOOL(synthetic),
      LD_SIZE(synthetic_train),
      LD_SIZE(synthetic_test),
      LD_REAL(shift_weight),
      LD_INT(label_shift),
      LD_STR(pretrain_train_images),
      LD_STR(pretrain_train_labels),
      LD_STR(pretrain_test_images),
      LD_STR(pretrain_test_labels),
      LD_STR(finetune_train_images),
      LD_STR(finetune_train_labels),
      LD_STR(finetune_test_images),
      LD_STR(finetune_test_labels),
      LD_STR(checkpoint),
      Binding{"widths", [](const ExperimentConfig& c) { return join_sizes(c.widths); },
              [](ExperimentConfig& c, const std::string& v) {
                c.widths.clear();
                for (auto& s : to_list(v)) c.widths.push_back(to_count("widths", s));
              }},
      LD_SIZE(probe_rank),
      LD_STR(probe_scheme),
      LD_STR(a0),
      LD_STR(b0),
      LD_STR(eta),
      LD_REAL(lr_c),
      LD_REAL(lr_ratio),
      LD_STR(probe_optimizer),
      LD_INT(probe_steps),
      LD_INT(probe_seeds),
      LD_SIZE(out_dim),
      LD_REAL(target_scale),
      LD_BOOL(full_scale),
  };
  return b;
}

#undef LD_STR
#undef LD_INT
#undef LD_SIZE
#undef LD_REAL
#undef LD_BOOL

}  // namespace

KeyValues to_kv(const ExperimentConfig& cfg) {
  KeyValues kv;
  for (const auto& b : bindings()) kv[b.key] = b.get(cfg);
  return kv;
}

void apply_kv(ExperimentConfig& cfg, const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    auto it = std::find_if(bindings().begin(), bindings().end(), [&](const Binding& b) { return k == b.key; });
    if (it == bindings().end()) fail(ErrorCode::InvalidArgument, "unknown config key '" + k + "'");
    it->set(cfg, v);
  }
}

KeyValues parse_kv_text(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::Format, "config line " + std::to_string(lineno) + ": expected key=value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues load_kv_file(const std::string& path) { return parse_kv_text(read_text_file(path)); }

void apply_full_scale(ExperimentConfig& cfg) {
  cfg.full_scale = true;
  cfg.n = 4096;
  cfg.seeds = 10;
  cfg.pretrain_steps = 2000;
  cfg.lrs = {3e-4, 4e-4, 5e-4, 6e-4, 7e-4, 8e-4, 9e-4, 1e-3, 2e-3, 3e-3};
  cfg.init_sizes = {2e-5, 5e-5, 8e-5, 1e-4, 4e-4, 7e-4, 1e-3, 3e-3, 6e-3, 9e-3, 2e-2, 5e-2};
  cfg.init_param = "sigma";
}

ProbeConfig probe_config(const ExperimentConfig& cfg) {
  ProbeConfig p;
  p.widths = cfg.widths;
  p.rank = cfg.probe_rank;
  p.scheme = parse_init_kind(cfg.probe_scheme);
  if (!cfg.a0.empty()) p.a0 = Gamma::parse(cfg.a0);
  if (!cfg.b0.empty()) p.b0 = Gamma::parse(cfg.b0);
  p.lr = LrSpec{cfg.lr_c, Gamma::parse(cfg.eta), cfg.lr_ratio};
  p.optimizer = parse_optimizer(cfg.probe_optimizer);
  p.steps = cfg.probe_steps;
  p.seeds = cfg.probe_seeds;
  p.master_seed = cfg.seed;
  p.out_dim = cfg.out_dim;
  p.target_scale = cfg.target_scale;
  p.s = cfg.scale;
  p.threads = cfg.threads;
  return p;
}

// ---------------------------------------------------------------- data

DataBundle load_data(const ExperimentConfig& cfg) {
  DataBundle b;
  if (cfg.synthetic) {
    SyntheticTask shifted{cfg.shift_weight, cfg.label_shift};
    b.pretrain_train = synthetic_dataset(cfg.seed * 4 + 0, cfg.synthetic_train, cfg.d, cfg.classes);
    b.pretrain_test = synthetic_dataset(cfg.seed * 4 + 1, cfg.synthetic_test, cfg.d, cfg.classes);
    b.finetune_train = synthetic_dataset(cfg.seed * 4 + 2, cfg.synthetic_train, cfg.d, cfg.classes, shifted);
    b.finetune_test = synthetic_dataset(cfg.seed * 4 + 3, cfg.synthetic_test, cfg.d, cfg.classes, shifted);
    b.pretrain_train.split = "pretrain-train";
    b.pretrain_test.split = "pretrain-test";
    b.finetune_train.split = "finetune-train";
    b.finetune_test.split = "finetune-test";
    return b;
  }
  auto need = [](const std::string& p, const char* key) {
    if (p.empty())
      fail(ErrorCode::InvalidArgument, std::string("no dataset path for '") + key +
                                           "' (set the IDX paths or enable synthetic data)");
  };
  need(cfg.pretrain_train_images, "pretrain_train_images");
  need(cfg.pretrain_train_labels, "pretrain_train_labels");
  need(cfg.pretrain_test_images, "pretrain_test_images");
  need(cfg.pretrain_test_labels, "pretrain_test_labels");
  b.pretrain_train = load_idx_dataset(cfg.pretrain_train_images, cfg.pretrain_train_labels, "pretrain", "train");
  b.pretrain_test = load_idx_dataset(cfg.pretrain_test_images, cfg.pretrain_test_labels, "pretrain", "test");
  if (!cfg.finetune_train_images.empty()) {
    need(cfg.finetune_train_labels, "finetune_train_labels");
    need(cfg.finetune_test_images, "finetune_test_images");
    need(cfg.finetune_test_labels, "finetune_test_labels");
    b.finetune_train = load_idx_dataset(cfg.finetune_train_images, cfg.finetune_train_labels, "finetune", "train");
    b.finetune_test = load_idx_dataset(cfg.finetune_test_images, cfg.finetune_test_labels, "finetune", "test");
  }
  return b;
}

// ---------------------------------------------------------------- pretraining

namespace {

constexpr std::uint64_t kStreamModel = 0x10;
constexpr std::uint64_t kStreamPretrainBatches = 0x11;
constexpr std::uint64_t kStreamFinetuneBatches = 0x100000;
constexpr std::uint64_t kStreamLoraInit = 0x200000;
constexpr std::size_t kEvalChunk = 500;

int argmax_col(const Matrix& logits, std::size_t j) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.rows(); ++i)
    if (logits(i, j) > logits(best, j)) best = i;
  return static_cast<int>(best);
}

Matrix gather_cols(const Matrix& m, const std::vector<std::ptrdiff_t>& cols) {
  Matrix out(m.rows(), cols.size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* src = m.data() + i * m.cols();
    double* dst = out.data() + i * cols.size();
    for (std::size_t c = 0; c < cols.size(); ++c) dst[c] = src[cols[c]];
  }
  return out;
}

void check_dims(const ExperimentConfig& cfg, const Dataset& ds) {
  if (ds.dim() != cfg.d)
    fail(ErrorCode::ShapeMismatch, "dataset '" + ds.name + "' has " + std::to_string(ds.dim()) +
                                       " pixels per image but d=" + std::to_string(cfg.d));
}

}  // namespace

Evaluation evaluate(const ToyModel& model, const Dataset& ds) {
  Evaluation e;
  if (ds.size() == 0) return e;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(ds.size(), start + kEvalChunk); ++i) rows.push_back(i);
    Batch b = gather_batch(ds, rows);
    ToyCache c = forward_toy(model, b.x);
    CrossEntropy ce = softmax_cross_entropy_batch(c.logits, b.labels);
    loss_sum += ce.loss * static_cast<double>(rows.size());
    for (std::size_t j = 0; j < rows.size(); ++j) correct += argmax_col(c.logits, j) == b.labels[j];
  }
  e.loss = loss_sum / static_cast<double>(ds.size());
  e.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return e;
}

PretrainResult pretrain(const ExperimentConfig& cfg, const Dataset& train, const Dataset& test) {
  check_dims(cfg, train);
  check_dims(cfg, test);
  if (cfg.pretrain_steps < 0) fail(ErrorCode::InvalidArgument, "pretrain_steps must be >= 0");
  Rng init = Rng::child(cfg.seed, kStreamModel);
  PretrainResult res;
  res.model = make_toy(cfg.d, cfg.n, cfg.classes, init);
  ToyModel& m = res.model;
  AdamState s_in, s_w0, s_out;
  BatchIterator it(train, std::min(cfg.batch, train.size()), Rng::child(cfg.seed, kStreamPretrainBatches).next_u64());
  for (int step = 1; step <= cfg.pretrain_steps; ++step) {
    Batch b = it.next_cycle();
    ToyCache c = forward_toy(m, b.x);
    CrossEntropy ce = softmax_cross_entropy_batch(c.logits, b.labels);
    ToyGrads g = backward_toy(m, c, ce.dlogits, true);
    adam_step(m.w_in, g.w_in, s_in, cfg.pretrain_lr);
    adam_step(m.hidden.W, g.w0, s_w0, cfg.pretrain_lr);
    adam_step(m.w_out, g.w_out, s_out, cfg.pretrain_lr);
    if ((cfg.log_every > 0 && step % cfg.log_every == 0) || step == cfg.pretrain_steps) {
      Evaluation e = evaluate(m, test);
      res.log.push_back({step, ce.loss, e.loss, e.accuracy});
    }
  }
  return res;
}

std::string pretrain_log_csv(const std::vector<PretrainLog>& log) {
  std::string s = "step,train_loss,test_loss,test_accuracy\n";
  for (const auto& l : log)
    s += std::to_string(l.step) + "," + format_double(l.train_loss) + "," + format_double(l.test_loss) + "," +
         format_double(l.test_accuracy) + "\n";
  return s;
}

// ---------------------------------------------------------------- fine-tuning

FeatureCache build_features(const ToyModel& model, const Dataset& ds, const std::vector<std::size_t>& rows) {
  if (ds.dim() != model.input_dim())
    fail(ErrorCode::ShapeMismatch, "dataset has " + std::to_string(ds.dim()) + " pixels but the model expects " +
                                       std::to_string(model.input_dim()));
  FeatureCache fc;
  const std::size_t n = model.width();
  fc.h1 = Matrix(n, rows.size());
  fc.w0h1 = Matrix(n, rows.size());
  fc.labels.resize(rows.size());
  fc.column_of.assign(ds.size(), -1);
  for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, rows.size() - start);
    std::vector<std::size_t> chunk(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                   rows.begin() + static_cast<std::ptrdiff_t>(start + count));
    Batch b = gather_batch(ds, chunk);
    Matrix h1 = relu(matmul(model.w_in, b.x));
    Matrix g = matmul(model.hidden.W, h1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < count; ++c) {
        fc.h1(i, start + c) = h1(i, c);
        fc.w0h1(i, start + c) = g(i, c);
      }
    for (std::size_t c = 0; c < count; ++c) {
      fc.labels[start + c] = b.labels[c];
      fc.column_of[chunk[c]] = static_cast<std::ptrdiff_t>(start + c);
    }
  }
  return fc;
}

FeatureCache build_features(const ToyModel& model, const Dataset& ds) {
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return build_features(model, ds, rows);
}

Evaluation evaluate_features(const ToyModel& model, const FeatureCache& fc) {
  Evaluation e;
  const std::size_t total = fc.labels.size();
  if (total == 0) return e;
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < total; start += kEvalChunk) {
    const std::size_t count = std::min(kEvalChunk, total - start);
    ToyCache c = forward_toy_features(model, slice_cols(fc.h1, start, count), slice_cols(fc.w0h1, start, count));
    std::vector<int> labels(fc.labels.begin() + static_cast<std::ptrdiff_t>(start),
                            fc.labels.begin() + static_cast<std::ptrdiff_t>(start + count));
    CrossEntropy ce = softmax_cross_entropy_batch(c.logits, labels);
    loss_sum += ce.loss * static_cast<double>(count);
    for (std::size_t j = 0; j < count; ++j) correct += argmax_col(c.logits, j) == labels[j];
  }
  e.loss = loss_sum / static_cast<double>(total);
  e.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  return e;
}

std::vector<std::vector<std::size_t>> batch_schedule(const ExperimentConfig& cfg, std::size_t n_train, int seed) {
  if (n_train == 0) fail(ErrorCode::InvalidArgument, "empty fine-tuning set");
  // The iterator only needs the row count, so a label-only stand-in suffices.
  Dataset shape;
  shape.labels.assign(n_train, 0);
  BatchIterator it(shape, std::min(cfg.batch, n_train),
                   Rng::child(cfg.seed, kStreamFinetuneBatches + static_cast<std::uint64_t>(seed)).next_u64());
  std::vector<std::vector<std::size_t>> out;
  for (int s = 0; s < cfg.finetune_steps; ++s) out.push_back(it.next_rows_cycle());
  return out;
}

static InitScheme scheme_for(const ExperimentConfig& cfg, const CellKey& key) {
  InitScheme sch;
  sch.kind = parse_init_kind(key.scheme);
  if (cfg.init_param == "beta") {
    sch.beta = key.init_size;
  } else if (cfg.init_param == "sigma") {
    const double unit = sch.kind == InitKind::B ? 1.0 / std::sqrt(static_cast<double>(cfg.r))
                                                : 1.0 / std::sqrt(static_cast<double>(cfg.n));
    sch.beta = key.init_size / unit;
  } else {
    fail(ErrorCode::InvalidArgument, "init_param must be 'beta' or 'sigma', got '" + cfg.init_param + "'");
  }
  return sch;
}

CellResult finetune_cell(const ExperimentConfig& cfg, const FinetuneContext& ctx, const CellKey& key) {
  CellResult res;
  res.key = key;
  ToyModel model = *ctx.pretrained;
  if (model.width() != cfg.n || model.input_dim() != cfg.d)
    fail(ErrorCode::ShapeMismatch, "pretrained model is d=" + std::to_string(model.input_dim()) + ", n=" +
                                       std::to_string(model.width()) + " but config asks for d=" +
                                       std::to_string(cfg.d) + ", n=" + std::to_string(cfg.n));
  const std::uint64_t frozen_before = frozen_hash(model);
  Rng init = Rng::child(cfg.seed, kStreamLoraInit + static_cast<std::uint64_t>(key.seed));
  attach_lora(model, scheme_for(cfg, key), cfg.r, cfg.scale, init);
  res.step0_loss = evaluate_features(model, *ctx.test_features).loss;

  const OptimizerKind opt = parse_optimizer(cfg.optimizer);
  AdamState sa, sb;
  for (const auto& rows : batch_schedule(cfg, ctx.train->size(), key.seed)) {
    std::vector<std::ptrdiff_t> cols(rows.size());
    std::vector<int> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      cols[i] = ctx.train_features->column_of.at(rows[i]);
      if (cols[i] < 0) fail(ErrorCode::InvalidArgument, "feature cache is missing a scheduled row");
      labels[i] = ctx.train_features->labels[static_cast<std::size_t>(cols[i])];
    }
    ToyCache c = forward_toy_features(model, gather_cols(ctx.train_features->h1, cols),
                                      gather_cols(ctx.train_features->w0h1, cols));
    CrossEntropy ce = softmax_cross_entropy_batch(c.logits, labels);
    ToyGrads g = backward_toy(model, c, ce.dlogits, false);
    if (opt == OptimizerKind::Adam) {
      adam_step(model.hidden.A, g.a, sa, key.lr);
      adam_step(model.hidden.B, g.b, sb, key.lr);
    } else {
      sgd_step(model.hidden.A, g.a, key.lr);
      sgd_step(model.hidden.B, g.b, key.lr);
    }
    ++res.steps;
  }
  Evaluation e = evaluate_features(model, *ctx.test_features);
  if (frozen_hash(model) != frozen_before) fail(ErrorCode::InvalidArgument, "frozen weights changed during fine-tuning");
  res.test_loss = e.loss;
  res.test_accuracy = e.accuracy;
  res.ok = std::isfinite(e.loss);
  if (!res.ok) res.error = "non-finite test loss";
  return res;
}

std::vector<CellKey> lattice(const ExperimentConfig& cfg) {
  std::vector<CellKey> cells;
  for (const auto& s : cfg.schemes)
    for (double lr : cfg.lrs)
      for (double init : cfg.init_sizes)
        for (int seed = 0; seed < cfg.seeds; ++seed) cells.push_back({s, lr, init, seed});
  return cells;
}

static bool key_less(const CellKey& a, const CellKey& b) {
  if (a.scheme != b.scheme) return a.scheme < b.scheme;
  if (a.lr != b.lr) return a.lr < b.lr;
  if (a.init_size != b.init_size) return a.init_size < b.init_size;
  return a.seed < b.seed;
}

GridResult run_grid(const ExperimentConfig& cfg, const ToyModel& pretrained, const Dataset& ft_train,
                    const Dataset& ft_test, const std::vector<CellKey>& cells) {
  check_dims(cfg, ft_train);
  check_dims(cfg, ft_test);
  std::set<int> seeds;
  for (const auto& c : cells) seeds.insert(c.seed);
  std::set<std::size_t> used;
  for (int s : seeds)
    for (const auto& rows : batch_schedule(cfg, ft_train.size(), s)) used.insert(rows.begin(), rows.end());
  const FeatureCache train_fc = build_features(pretrained, ft_train, std::vector<std::size_t>(used.begin(), used.end()));
  const FeatureCache test_fc = build_features(pretrained, ft_test);
  FinetuneContext ctx{&pretrained, &ft_train, &train_fc, &test_fc};

  GridResult g;
  g.cells.resize(cells.size());
  detail::parallel_for(cells.size(), cfg.threads, [&](std::size_t i) {
    try {
      g.cells[i] = finetune_cell(cfg, ctx, cells[i]);
    } catch (const Error& e) {
      CellResult r;
      r.key = cells[i];
      r.ok = false;
      r.error = e.what();
      g.cells[i] = r;
    }
  });
  std::stable_sort(g.cells.begin(), g.cells.end(),
                   [](const CellResult& a, const CellResult& b) { return key_less(a.key, b.key); });
  return g;
}

// ---------------------------------------------------------------- summaries

namespace {

struct Stats {
  double mean = 0, std = 0, mean_acc = 0;
  int ok = 0, failed = 0;
};

Stats stats_of(const std::vector<const CellResult*>& group) {
  Stats s;
  std::vector<double> losses, accs;
  for (const auto* c : group) {
    if (c->ok) {
      losses.push_back(c->test_loss);
      accs.push_back(c->test_accuracy);
    } else {
      ++s.failed;
    }
  }
  s.ok = static_cast<int>(losses.size());
  if (s.ok == 0) return s;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    s.mean += losses[i];
    s.mean_acc += accs[i];
  }
  s.mean /= s.ok;
  s.mean_acc /= s.ok;
  if (s.ok > 1) {
    double ss = 0;
    for (double l : losses) ss += (l - s.mean) * (l - s.mean);
    s.std = std::sqrt(ss / (s.ok - 1));
  } else {
    s.std = std::numeric_limits<double>::quiet_NaN();
  }
  return s;
}

using GroupKey = std::tuple<std::string, double, double>;

std::map<GroupKey, std::vector<const CellResult*>> groups_of(const GridResult& g) {
  std::map<GroupKey, std::vector<const CellResult*>> m;
  for (const auto& c : g.cells) m[{c.key.scheme, c.key.lr, c.key.init_size}].push_back(&c);
  return m;
}

std::string na_or(double v) { return std::isfinite(v) ? format_double(v) : "NA"; }

}  // namespace

std::vector<BestCell> best_over_init(const GridResult& g) {
  std::map<std::pair<std::string, double>, BestCell> best;
  for (const auto& [key, group] : groups_of(g)) {
    const auto& [scheme, lr, init] = key;
    Stats s = stats_of(group);
    auto& b = best.try_emplace({scheme, lr}, BestCell{scheme, lr, 0, std::numeric_limits<double>::infinity(), 0, 0, 0, true})
                  .first->second;
    if (s.failed > 0) b.complete = false;
    if (s.ok > 0 && s.mean < b.mean_loss) {
      b.mean_loss = s.mean;
      b.std_loss = s.std;
      b.mean_accuracy = s.mean_acc;
      b.best_init_size = init;
      b.replicates = s.ok;
    }
  }
  std::vector<BestCell> out;
  for (auto& [k, v] : best) out.push_back(v);
  return out;
}

std::optional<BestCell> find_best(const std::vector<BestCell>& b, const std::string& scheme, double lr) {
  for (const auto& c : b)
    if (c.scheme == scheme && c.lr == lr && c.replicates > 0) return c;
  return std::nullopt;
}

std::string grid_csv_header() { return "scheme,lr,init_size,seed,test_loss,test_accuracy,steps,step0_loss,status"; }

std::string grid_csv_row(const CellResult& c) {
  return c.key.scheme + "," + format_double(c.key.lr) + "," + format_double(c.key.init_size) + "," +
         std::to_string(c.key.seed) + "," + (c.ok ? format_double(c.test_loss) : "NA") + "," +
         (c.ok ? format_double(c.test_accuracy) : "NA") + "," + std::to_string(c.steps) + "," +
         (c.ok ? format_double(c.step0_loss) : "NA") + "," + (c.ok ? "ok" : "failed");
}

std::string grid_csv(const GridResult& g) {
  std::string s = grid_csv_header() + "\n";
  for (const auto& c : g.cells) s += grid_csv_row(c) + "\n";
  return s;
}

GridResult parse_grid_csv(const std::string& text) {
  GridResult g;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || trim(line) != grid_csv_header())
    fail(ErrorCode::Format, "grid CSV has an unexpected header");
  while (std::getline(is, line)) {
    if (trim(line).empty()) continue;
    auto f = split(trim(line), ',');
    if (f.size() != 9) fail(ErrorCode::Format, "grid CSV row has " + std::to_string(f.size()) + " fields");
    CellResult c;
    c.key.scheme = f[0];
    c.key.lr = parse_double(f[1]);
    c.key.init_size = parse_double(f[2]);
    c.key.seed = static_cast<int>(to_int("seed", f[3]));
    c.ok = f[8] == "ok";
    c.steps = static_cast<int>(to_int("steps", f[6]));
    if (c.ok) {
      c.test_loss = parse_double(f[4]);
      c.test_accuracy = parse_double(f[5]);
      c.step0_loss = parse_double(f[7]);
    }
    g.cells.push_back(c);
  }
  return g;
}

std::string summary_csv(const GridResult& g) {
  std::string s = "scheme,lr,best_init_size,mean_test_loss,std_test_loss,mean_test_accuracy,replicates,complete\n";
  for (const auto& b : best_over_init(g)) {
    const bool any = b.replicates > 0;
    s += b.scheme + "," + format_double(b.lr) + "," + (any ? format_double(b.best_init_size) : "NA") + "," +
         (any ? format_double(b.mean_loss) : "NA") + "," + (any ? na_or(b.std_loss) : "NA") + "," +
         (any ? format_double(b.mean_accuracy) : "NA") + "," + std::to_string(b.replicates) + "," +
         (b.complete ? "1" : "0") + "\n";
  }
  return s;
}

std::string improvement_csv(const GridResult& g, const std::string& base, const std::string& other) {
  const auto best = best_over_init(g);
  std::set<double> lrs;
  for (const auto& c : g.cells) lrs.insert(c.key.lr);
  std::string s = "lr," + base + "," + other + ",difference,relative\n";
  for (double lr : lrs) {
    auto a = find_best(best, base, lr), b = find_best(best, other, lr);
    s += format_double(lr) + "," + (a ? format_double(a->mean_loss) : "NA") + "," +
         (b ? format_double(b->mean_loss) : "NA") + ",";
    if (a && b)
      s += format_double(b->mean_loss - a->mean_loss) + "," + format_double(b->mean_loss / a->mean_loss - 1.0);
    else
      s += "NA,NA";
    s += "\n";
  }
  return s;
}

std::string summary_text(const GridResult& g, const ExperimentConfig& cfg) {
  std::ostringstream os;
  std::set<double> lrs, inits;
  std::set<std::string> schemes;
  for (const auto& c : g.cells) {
    lrs.insert(c.key.lr);
    inits.insert(c.key.init_size);
    schemes.insert(c.key.scheme);
  }
  const auto groups = groups_of(g);
  os << "Mean test loss over seeds (rows: " << cfg.init_param << ", columns: learning rate)\n";
  for (const auto& s : schemes) {
    os << "\n[" << s << "]\n" << std::setw(12) << cfg.init_param;
    for (double lr : lrs) os << std::setw(12) << format_double(lr);
    os << "\n";
    for (double init : inits) {
      os << std::setw(12) << format_double(init);
      for (double lr : lrs) {
        auto it = groups.find({s, lr, init});
        std::string cell = "-";
        if (it != groups.end()) {
          Stats st = stats_of(it->second);
          std::ostringstream v;
          if (st.ok > 0)
            v << std::fixed << std::setprecision(4) << st.mean;
          else
            v << "NA";
          cell = v.str();
        }
        os << std::setw(12) << cell;
      }
      os << "\n";
    }
  }
  const auto best = best_over_init(g);
  os << "\nBest over init size, mean test loss\n" << std::setw(12) << "lr";
  for (const auto& s : schemes) os << std::setw(16) << s;
  os << "\n";
  for (double lr : lrs) {
    os << std::setw(12) << format_double(lr);
    for (const auto& s : schemes) {
      auto b = find_best(best, s, lr);
      std::ostringstream v;
      if (b)
        v << std::fixed << std::setprecision(4) << b->mean_loss << (b->complete ? "" : "*");
      else
        v << "NA";
      os << std::setw(16) << v.str();
    }
    os << "\n";
  }
  if (schemes.count("init_a") && schemes.count("init_ab")) {
    os << "\nImprovement init_ab - init_a (negative favours init_ab)\n";
    for (double lr : lrs) {
      auto a = find_best(best, "init_a", lr), b = find_best(best, "init_ab", lr);
      os << std::setw(12) << format_double(lr) << std::setw(16);
      if (a && b) {
        std::ostringstream v;
        v << std::showpos << std::fixed << std::setprecision(4) << b->mean_loss - a->mean_loss;
        os << v.str();
      } else {
        os << "NA";
      }
      os << "\n";
    }
  }
  bool incomplete = std::any_of(best.begin(), best.end(), [](const BestCell& b) { return !b.complete; });
  if (incomplete) os << "\n* lattice incomplete: some cells failed and are excluded\n";
  return os.str();
}

// ---------------------------------------------------------------- manifests and phases

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot write '" + path + "'");
  os << text;
  if (!os) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string manifest_json(const ExperimentConfig& cfg, const std::vector<std::string>& outputs,
                          const std::map<std::string, std::string>& extra) {
  nlohmann::ordered_json j;
  j["artifact"] = "loradyn";
  j["version"] = kArtifactVersion;
  j["phase"] = cfg.phase;
  j["master_seed"] = cfg.seed;
  nlohmann::ordered_json c = nlohmann::ordered_json::object();
  for (const auto& [k, v] : to_kv(cfg)) c[k] = v;
  j["config"] = c;
  j["outputs"] = outputs;
  for (const auto& [k, v] : extra) j[k] = v;
  return j.dump(2) + "\n";
}

ExperimentConfig config_from_manifest(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, "manifest '" + path + "': " + e.what());
  }
  if (!j.contains("config") || !j["config"].is_object())
    fail(ErrorCode::Format, "manifest '" + path + "' has no config object");
  KeyValues kv;
  for (auto it = j["config"].begin(); it != j["config"].end(); ++it) {
    if (!it.value().is_string()) fail(ErrorCode::Format, "manifest config value for '" + it.key() + "' is not a string");
    kv[it.key()] = it.value().get<std::string>();
  }
  ExperimentConfig cfg;
  apply_kv(cfg, kv);
  return cfg;
}

namespace {

void say(const LogFn& log, const std::string& s) {
  if (log) log(s);
}

std::string out_path(const ExperimentConfig& cfg, const std::string& name) { return (fs::path(cfg.out) / name).string(); }

std::string file_hash(const std::string& path) {
  const std::string bytes = read_text_file(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// Loads the configured checkpoint, or pretrains in-process and saves one.
ToyModel pretrained_model(const ExperimentConfig& cfg, const DataBundle& data, std::vector<std::string>& outputs,
                          std::map<std::string, std::string>& extra, const LogFn& log) {
  if (!cfg.checkpoint.empty()) {
    ToyModel m = load_checkpoint(cfg.checkpoint);
    if (m.width() != cfg.n || m.input_dim() != cfg.d || m.classes() != cfg.classes)
      fail(ErrorCode::ShapeMismatch, "checkpoint dims (d=" + std::to_string(m.input_dim()) + ", n=" +
                                         std::to_string(m.width()) + ", classes=" + std::to_string(m.classes()) +
                                         ") do not match config (d=" + std::to_string(cfg.d) + ", n=" +
                                         std::to_string(cfg.n) + ", classes=" + std::to_string(cfg.classes) + ")");
    extra["checkpoint_hash"] = file_hash(cfg.checkpoint);
    say(log, "loaded checkpoint " + cfg.checkpoint);
    return m;
  }
  say(log, "pretraining n=" + std::to_string(cfg.n) + " for " + std::to_string(cfg.pretrain_steps) + " steps");
  PretrainResult pr = pretrain(cfg, data.pretrain_train, data.pretrain_test);
  write_text_file(out_path(cfg, "pretrain_log.csv"), pretrain_log_csv(pr.log));
  save_checkpoint(out_path(cfg, "pretrained.ckpt"), pr.model, {"none", cfg.seed, cfg.pretrain_steps});
  outputs.push_back("pretrain_log.csv");
  outputs.push_back("pretrained.ckpt");
  if (!pr.log.empty())
    say(log, "pretrained test accuracy " + format_double(pr.log.back().test_accuracy));
  return std::move(pr.model);
}

void finish(const ExperimentConfig& cfg, std::vector<std::string>& outputs,
            const std::map<std::string, std::string>& extra) {
  write_text_file(out_path(cfg, "manifest.json"), manifest_json(cfg, outputs, extra));
  outputs.push_back("manifest.json");
}

void require_finetune_data(const DataBundle& d) {
  if (d.finetune_train.size() == 0 || d.finetune_test.size() == 0)
    fail(ErrorCode::InvalidArgument, "no fine-tuning dataset configured");
}

}  // namespace

std::vector<std::string> run_pretrain_phase(const ExperimentConfig& cfg0, const LogFn& log) {
  ExperimentConfig cfg = cfg0;
  cfg.phase = "pretrain";
  cfg.checkpoint.clear();
  fs::create_directories(cfg.out);
  DataBundle data = load_data(cfg);
  std::vector<std::string> outputs;
  std::map<std::string, std::string> extra;
  pretrained_model(cfg, data, outputs, extra, log);
  finish(cfg, outputs, extra);
  return outputs;
}

std::vector<std::string> run_finetune_phase(const ExperimentConfig& cfg0, const LogFn& log) {
  ExperimentConfig cfg = cfg0;
  cfg.phase = "finetune";
  if (cfg.schemes.empty() || cfg.lrs.empty() || cfg.init_sizes.empty())
    fail(ErrorCode::InvalidArgument, "finetune needs a scheme, a learning rate and an init size");
  cfg.schemes.resize(1);
  cfg.lrs.resize(1);
  cfg.init_sizes.resize(1);
  fs::create_directories(cfg.out);
  DataBundle data = load_data(cfg);
  require_finetune_data(data);
  std::vector<std::string> outputs;
  std::map<std::string, std::string> extra;
  ToyModel model = pretrained_model(cfg, data, outputs, extra, log);
  GridResult g = run_grid(cfg, model, data.finetune_train, data.finetune_test, lattice(cfg));
  write_text_file(out_path(cfg, "finetune.csv"), grid_csv(g));
  outputs.push_back("finetune.csv");
  finish(cfg, outputs, extra);
  return outputs;
}

std::vector<std::string> run_grid_phase(const ExperimentConfig& cfg0, const LogFn& log) {
  ExperimentConfig cfg = cfg0;
  cfg.phase = "grid";
  fs::create_directories(cfg.out);
  DataBundle data = load_data(cfg);
  require_finetune_data(data);
  std::vector<std::string> outputs;
  std::map<std::string, std::string> extra;
  ToyModel model = pretrained_model(cfg, data, outputs, extra, log);
  const auto cells = lattice(cfg);
  say(log, "running " + std::to_string(cells.size()) + " fine-tuning cells on " + std::to_string(cfg.threads) +
               " thread(s)");
  GridResult g = run_grid(cfg, model, data.finetune_train, data.finetune_test, cells);
  write_text_file(out_path(cfg, "grid.csv"), grid_csv(g));
  write_text_file(out_path(cfg, "summary.csv"), summary_csv(g));
  write_text_file(out_path(cfg, "improvement.csv"), improvement_csv(g));
  const std::string text = summary_text(g, cfg);
  write_text_file(out_path(cfg, "summary.txt"), text);
  say(log, text);
  for (const char* f : {"grid.csv", "summary.csv", "improvement.csv", "summary.txt"}) outputs.push_back(f);
  finish(cfg, outputs, extra);
  return outputs;
}

std::vector<std::string> run_probe_phase(const ExperimentConfig& cfg0, const LogFn& log) {
  ExperimentConfig cfg = cfg0;
  cfg.phase = "probe";
  fs::create_directories(cfg.out);
  const ProbeConfig pc = probe_config(cfg);
  say(log, "probing " + std::to_string(pc.widths.size()) + " widths x " + std::to_string(pc.seeds) + " seeds");
  const auto records = run_probe(pc);
  std::string csv = probe_csv_header() + "\n";
  for (const auto& r : records) csv += probe_csv_row(r) + "\n";
  write_text_file(out_path(cfg, "probe.csv"), csv);

  const std::vector<Quantity> qs = {Quantity::D1, Quantity::D2, Quantity::ZB};
  std::string closed = verdict_csv_header() + "\n", stepwise = verdict_csv_header() + "\n";
  for (int t : {2, pc.steps}) {
    for (const auto& v : compare_to_theory(records, t, predicted_regime(pc, t, false), qs).rows) {
      closed += verdict_csv_row(v) + "\n";
      say(log, "closed-form  " + verdict_csv_row(v));
    }
    for (const auto& v : compare_to_theory(records, t, predicted_regime(pc, t, true), qs).rows) {
      stepwise += verdict_csv_row(v) + "\n";
      say(log, "step-resolved " + verdict_csv_row(v));
    }
    if (pc.steps == 2) break;
  }
  write_text_file(out_path(cfg, "verdict.csv"), closed);
  write_text_file(out_path(cfg, "verdict_stepwise.csv"), stepwise);
  std::vector<std::string> outputs = {"probe.csv", "verdict.csv", "verdict_stepwise.csv"};
  bool diverged = std::any_of(records.begin(), records.end(), [](const ProbeRecord& r) { return r.diverged; });
  finish(cfg, outputs, {{"diverged", diverged ? "true" : "false"}});
  return outputs;
}

// ---------------------------------------------------------------- report

ReportOutput build_report(const std::vector<std::string>& dirs) {
  if (dirs.empty()) fail(ErrorCode::InvalidArgument, "report needs at least one result directory");
  // Keys that may differ between merged runs.
  const std::set<std::string> free_keys = {"seed", "out", "threads", "seeds", "phase", "checkpoint"};
  std::optional<KeyValues> reference;
  std::string reference_dir;
  GridResult merged;
  int run_index = 0;
  for (const auto& dir : dirs) {
    const std::string mpath = (fs::path(dir) / "manifest.json").string();
    if (!fs::exists(mpath)) fail(ErrorCode::Io, "no manifest.json in '" + dir + "'");
    ExperimentConfig cfg = config_from_manifest(mpath);
    KeyValues kv = to_kv(cfg);
    for (const auto& k : free_keys) kv.erase(k);
    if (!reference) {
      reference = kv;
      reference_dir = dir;
    } else if (kv != *reference) {
      std::string diff;
      for (const auto& [k, v] : kv)
        if (reference->at(k) != v) diff += " " + k;
      fail(ErrorCode::Incompatible, "'" + dir + "' is not compatible with '" + reference_dir + "'; differing keys:" + diff);
    }
    std::string file;
    for (const char* name : {"grid.csv", "finetune.csv"})
      if (fs::exists(fs::path(dir) / name)) {
        file = (fs::path(dir) / name).string();
        break;
      }
    if (file.empty()) fail(ErrorCode::Io, "no grid.csv or finetune.csv in '" + dir + "'");
    GridResult g = parse_grid_csv(read_text_file(file));
    for (auto& c : g.cells) {
      c.key.seed += run_index * 1000000;  // keep replicates of different runs distinct
      merged.cells.push_back(c);
    }
    ++run_index;
  }

  ReportOutput out;
  std::ostringstream csv;
  csv << "scheme,lr,init_size,replicates,failed,mean_test_loss,std_test_loss,mean_test_accuracy,std_test_accuracy\n";
  for (const auto& [key, group] : groups_of(merged)) {
    const auto& [scheme, lr, init] = key;
    std::vector<double> acc;
    for (const auto* c : group)
      if (c->ok) acc.push_back(c->test_accuracy);
    Stats s = stats_of(group);
    double acc_std = std::numeric_limits<double>::quiet_NaN();
    if (acc.size() > 1) {
      double ss = 0;
      for (double a : acc) ss += (a - s.mean_acc) * (a - s.mean_acc);
      acc_std = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
    const bool any = s.ok > 0;
    csv << scheme << "," << format_double(lr) << "," << format_double(init) << "," << s.ok << "," << s.failed << ","
        << (any ? format_double(s.mean) : "NA") << "," << (any ? na_or(s.std) : "NA") << ","
        << (any ? format_double(s.mean_acc) : "NA") << "," << (any ? na_or(acc_std) : "NA") << "\n";
  }
  out.csv = csv.str();

  std::ostringstream text;
  text << "Merged " << dirs.size() << " run(s), " << merged.cells.size() << " cells\n\n";
  text << "Regime verdicts under a uniform Adam learning rate\n";
  text << std::setw(10) << "scheme" << std::setw(10) << "stable" << std::setw(11) << "efficient" << std::setw(10)
       << "robust" << "\n";
  for (const auto& row : classify_table(scheme_table_configs()))
    text << std::setw(10) << row.name << std::setw(10) << (row.stable ? "yes" : "no") << std::setw(11)
         << (row.efficient ? "yes" : "no") << std::setw(10) << (row.robust ? "yes" : "no") << "\n";
  ExperimentConfig display;
  apply_kv(display, *reference);
  text << "\n" << summary_text(merged, display);
  out.text = text.str();
  return out;
}

std::vector<std::string> run_report_phase(const std::vector<std::string>& dirs, const std::string& out,
                                          const LogFn& log) {
  ReportOutput r = build_report(dirs);
  fs::create_directories(out);
  write_text_file((fs::path(out) / "report.csv").string(), r.csv);
  write_text_file((fs::path(out) / "report.txt").string(), r.text);
  say(log, r.text);
  return {"report.csv", "report.txt"};
}

}  // namespace loradyn
