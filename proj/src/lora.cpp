// SPDX-License-Identifier: Apache-2.0
#include "loradyn/lora.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "loradyn/error.hpp"

namespace loradyn {

std::string init_kind_name(InitKind k) {
  switch (k) {
    case InitKind::A: return "init_a";
    case InitKind::B: return "init_b";
    case InitKind::AB: return "init_ab";
    case InitKind::ABPlus: return "init_ab_plus";
  }
  return "?";
}

InitKind parse_init_kind(const std::string& s) {
  if (s == "init_a" || s == "A") return InitKind::A;
  if (s == "init_b" || s == "B") return InitKind::B;
  if (s == "init_ab" || s == "AB") return InitKind::AB;
  if (s == "init_ab_plus" || s == "AB+" || s == "ABplus") return InitKind::ABPlus;
  fail(ErrorCode::InvalidArgument, "unknown init scheme '" + s + "' (init_a, init_b, init_ab, init_ab_plus)");
}

LoraLayer init_lora(Matrix W, const InitScheme& scheme, std::size_t r, double s, Rng& rng) {
  const std::size_t n1 = W.rows(), n2 = W.cols();
  if (n1 == 0 || n2 == 0 || r == 0) fail(ErrorCode::InvalidArgument, "init_lora: dimensions must be positive");
  if (4 * r > std::min(n1, n2))
    fail(ErrorCode::InvalidArgument, "init_lora: rank " + std::to_string(r) + " exceeds min(" + std::to_string(n1) +
                                         "," + std::to_string(n2) + ")/4");
  if (!(scheme.beta > 0.0))
    fail(ErrorCode::InvalidArgument, "init_lora: beta must be positive, otherwise both factors start at zero");
  if (!std::isfinite(s)) fail(ErrorCode::InvalidArgument, "init_lora: scale must be finite");

  LoraLayer L;
  L.W = std::move(W);
  L.s = s;
  const double kaiming = scheme.beta / std::sqrt(static_cast<double>(n2));
  switch (scheme.kind) {
    case InitKind::A:
      L.A = gaussian(r, n2, kaiming, rng);
      L.B = Matrix(n1, r);
      break;
    case InitKind::B:
      L.A = Matrix(r, n2);
      L.B = gaussian(n1, r, scheme.beta / std::sqrt(static_cast<double>(r)), rng);
      break;
    case InitKind::AB:
    case InitKind::ABPlus:
      L.A = gaussian(r, n2, kaiming, rng);
      L.B = gaussian(n1, r, kaiming, rng);
      break;
  }
  if (scheme.kind == InitKind::AB) {
    L.subtract_init = true;
    L.A0 = L.A;
    L.B0 = L.B;
  }
  return L;
}

LoraForward forward_lora(const LoraLayer& L, const Matrix& z, const Matrix* wz) {
  if (z.rows() != L.W.cols())
    fail(ErrorCode::ShapeMismatch, "forward_lora: input " + z.shape() + " for weight " + L.W.shape());
  LoraForward f;
  f.zbar = wz ? *wz : matmul(L.W, z);
  if (!f.zbar.same_shape(Matrix(L.W.rows(), z.cols())))
    fail(ErrorCode::ShapeMismatch, "forward_lora: precomputed W*Z has shape " + f.zbar.shape());
  if (!L.attached()) {
    f.za = Matrix(0, z.cols());
    f.zb = Matrix(L.W.rows(), z.cols());
    return f;
  }
  f.za = matmul(L.A, z);
  Matrix bza = matmul(L.B, f.za);
  f.zb = bza;
  f.zb *= L.s;
  if (L.subtract_init) {
    // Cancel before adding W*Z so the starting output is exactly W*Z.
    bza -= matmul(L.B0, matmul(L.A0, z));
    bza *= L.s;
    f.zbar += bza;
  } else {
    f.zbar += f.zb;
  }
  return f;
}

LoraGrads backward_lora(const LoraLayer& L, const Matrix& z, const Matrix& za, const Matrix& dzbar) {
  if (dzbar.rows() != L.W.rows() || dzbar.cols() != z.cols() || z.rows() != L.W.cols() ||
      za.rows() != L.rank() || za.cols() != z.cols())
    fail(ErrorCode::ShapeMismatch, "backward_lora: Z " + z.shape() + ", Z_A " + za.shape() + ", dZbar " +
                                       dzbar.shape() + " for weight " + L.W.shape() + " rank " +
                                       std::to_string(L.rank()));
  LoraGrads g;
  g.ga = matmul_nt(matmul_tn(L.B, dzbar), z);
  g.ga *= L.s;
  g.gb = matmul_nt(dzbar, za);
  g.gb *= L.s;
  return g;
}

Matrix lora_input_grad(const LoraLayer& L, const Matrix& dzbar) {
  Matrix dz = matmul_tn(L.W, dzbar);
  if (L.attached()) {
    Matrix t = matmul_tn(L.A, matmul_tn(L.B, dzbar));
    t *= L.s;
    dz += t;
    if (L.subtract_init) {
      Matrix c = matmul_tn(L.A0, matmul_tn(L.B0, dzbar));
      c *= L.s;
      dz -= c;
    }
  }
  return dz;
}

DeltaTerms delta_decompose(const Matrix& a_prev, const Matrix& b_prev, const Matrix& a_new, const Matrix& b_new,
                           const Matrix& z, double s) {
  if (!a_prev.same_shape(a_new) || !b_prev.same_shape(b_new) || a_prev.cols() != z.rows() ||
      b_prev.cols() != a_prev.rows())
    fail(ErrorCode::ShapeMismatch, "delta_decompose: A " + a_prev.shape() + "/" + a_new.shape() + ", B " +
                                       b_prev.shape() + "/" + b_new.shape() + ", Z " + z.shape());
  const Matrix da = a_new - a_prev;
  const Matrix db = b_new - b_prev;
  const Matrix da_z = matmul(da, z);
  DeltaTerms t;
  t.d1 = matmul(b_prev, da_z);
  t.d1 *= s;
  t.d2 = matmul(db, matmul(a_prev, z));
  t.d2 *= s;
  t.d3 = matmul(db, da_z);
  t.d3 *= s;
  return t;
}

ToyModel make_toy(std::size_t d, std::size_t n, std::size_t classes, Rng& rng) {
  if (d == 0 || n == 0 || classes == 0) fail(ErrorCode::InvalidArgument, "make_toy: dimensions must be positive");
  ToyModel m;
  m.w_in = gaussian(n, d, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  m.hidden.W = gaussian(n, n, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  m.hidden.A = Matrix(0, n);
  m.hidden.B = Matrix(n, 0);
  m.w_out = gaussian(classes, n, 1.0 / std::sqrt(static_cast<double>(n)), rng);
  return m;
}

void attach_lora(ToyModel& model, const InitScheme& scheme, std::size_t r, double s, Rng& rng) {
  model.hidden = init_lora(std::move(model.hidden.W), scheme, r, s, rng);
}

ToyCache forward_toy(const ToyModel& model, const Matrix& x) {
  if (x.rows() != model.input_dim())
    fail(ErrorCode::ShapeMismatch, "forward_toy: input " + x.shape() + " for W_in " + model.w_in.shape());
  ToyCache c;
  c.h1_pre = matmul(model.w_in, x);
  c.h1 = relu(c.h1_pre);
  Matrix w0h1 = matmul(model.hidden.W, c.h1);
  ToyCache rest = forward_toy_features(model, c.h1, w0h1);
  rest.x = x;
  rest.h1_pre = std::move(c.h1_pre);
  return rest;
}

ToyCache forward_toy_features(const ToyModel& model, const Matrix& h1, const Matrix& w0h1) {
  ToyCache c;
  c.h1 = h1;
  LoraForward f = forward_lora(model.hidden, h1, &w0h1);
  c.za = std::move(f.za);
  c.h2_pre = std::move(f.zbar);
  c.h2 = relu(c.h2_pre);
  c.logits = matmul(model.w_out, c.h2);
  return c;
}

ToyGrads backward_toy(const ToyModel& model, const ToyCache& c, const Matrix& dlogits, bool train_all) {
  if (dlogits.rows() != model.classes() || dlogits.cols() != c.h2.cols())
    fail(ErrorCode::ShapeMismatch, "backward_toy: dlogits " + dlogits.shape() + " for logits " + c.logits.shape());
  ToyGrads g;
  const Matrix dh2_pre = relu_backward(c.h2_pre, matmul_tn(model.w_out, dlogits));
  if (model.hidden.attached()) {
    LoraGrads lg = backward_lora(model.hidden, c.h1, c.za, dh2_pre);
    g.a = std::move(lg.ga);
    g.b = std::move(lg.gb);
  }
  if (train_all) {
    if (c.x.empty() || c.h1_pre.empty())
      fail(ErrorCode::InvalidArgument, "backward_toy: full gradients need a cache from forward_toy");
    g.w_out = matmul_nt(dlogits, c.h2);
    g.w0 = matmul_nt(dh2_pre, c.h1);
    const Matrix dh1_pre = relu_backward(c.h1_pre, lora_input_grad(model.hidden, dh2_pre));
    g.w_in = matmul_nt(dh1_pre, c.x);
  }
  return g;
}

std::uint64_t frozen_hash(const ToyModel& model) {
  std::uint64_t h = hash_matrix(model.w_in);
  h = h * 31 + hash_matrix(model.hidden.W);
  h = h * 31 + hash_matrix(model.w_out);
  return h;
}

// ---- checkpoint ----

namespace {

constexpr char kMagic[8] = {'L', 'D', 'Y', 'N', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(const unsigned char* b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

struct Block {
  std::string name;
  const Matrix* m;
};

std::vector<Block> blocks_of(const ToyModel& model) {
  std::vector<Block> bl = {{"w_in", &model.w_in}, {"w0", &model.hidden.W}, {"w_out", &model.w_out}};
  if (model.hidden.attached()) {
    bl.push_back({"lora_a", &model.hidden.A});
    bl.push_back({"lora_b", &model.hidden.B});
    if (model.hidden.subtract_init) {
      bl.push_back({"lora_a0", &model.hidden.A0});
      bl.push_back({"lora_b0", &model.hidden.B0});
    }
  }
  return bl;
}

}  // namespace

void save_checkpoint(const std::string& path, const ToyModel& model, const CheckpointMeta& meta) {
  nlohmann::ordered_json h;
  h["format"] = "loradyn-checkpoint";
  h["version"] = 1;
  h["dims"] = {{"d", model.input_dim()}, {"n", model.width()}, {"r", model.hidden.rank()}};
  h["classes"] = model.classes();
  h["scheme"] = meta.scheme;
  h["seed"] = meta.seed;
  h["step"] = meta.step;
  h["scale"] = model.hidden.s;
  h["subtract_init"] = model.hidden.subtract_init;
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& b : blocks_of(model)) list.push_back({{"name", b.name}, {"rows", b.m->rows()}, {"cols", b.m->cols()}});
  h["blocks"] = list;
  const std::string header = h.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorCode::Io, "cannot open '" + path + "' for writing");
  os.write(kMagic, 8);
  put_u64(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& b : blocks_of(model))
    for (double v : b.m->values()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) fail(ErrorCode::Io, "write failed for '" + path + "'");
}

ToyModel load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorCode::Io, "cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    fail(ErrorCode::Format, "'" + path + "' is not a checkpoint (bad magic)");
  const std::uint64_t hlen = get_u64(bytes.data() + 8);
  if (hlen > bytes.size() - 16) fail(ErrorCode::Format, "checkpoint header length exceeds file size");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("checkpoint header: ") + e.what());
  }
  std::size_t offset = 16 + hlen;
  ToyModel m;
  try {
    const std::size_t d = h.at("dims").at("d"), n = h.at("dims").at("n"), r = h.at("dims").at("r");
    const std::size_t classes = h.at("classes");
    m.hidden.s = h.value("scale", 1.0);
    m.hidden.subtract_init = h.value("subtract_init", false);
    m.hidden.A = Matrix(0, n);
    m.hidden.B = Matrix(n, 0);
    for (const auto& b : h.at("blocks")) {
      const std::string name = b.at("name");
      const std::size_t rows = b.at("rows"), cols = b.at("cols");
      std::size_t er = 0, ec = 0;
      Matrix* dst = nullptr;
      if (name == "w_in") { er = n; ec = d; dst = &m.w_in; }
      else if (name == "w0") { er = n; ec = n; dst = &m.hidden.W; }
      else if (name == "w_out") { er = classes; ec = n; dst = &m.w_out; }
      else if (name == "lora_a") { er = r; ec = n; dst = &m.hidden.A; }
      else if (name == "lora_b") { er = n; ec = r; dst = &m.hidden.B; }
      else if (name == "lora_a0") { er = r; ec = n; dst = &m.hidden.A0; }
      else if (name == "lora_b0") { er = n; ec = r; dst = &m.hidden.B0; }
      else fail(ErrorCode::Format, "checkpoint has unknown block '" + name + "'");
      if (rows != er || cols != ec)
        fail(ErrorCode::Format, "checkpoint block '" + name + "' is " + std::to_string(rows) + "x" +
                                    std::to_string(cols) + " but header dims imply " + std::to_string(er) + "x" +
                                    std::to_string(ec));
      const std::size_t count = rows * cols;
      if (bytes.size() - offset < count * 8)
        fail(ErrorCode::Format, "checkpoint truncated in block '" + name + "': need " + std::to_string(count * 8) +
                                    " bytes, have " + std::to_string(bytes.size() - offset));
      std::vector<double> vals(count);
      for (std::size_t i = 0; i < count; ++i) vals[i] = std::bit_cast<double>(get_u64(bytes.data() + offset + 8 * i));
      offset += count * 8;
      *dst = Matrix(rows, cols, std::move(vals));
    }
    if (m.w_in.empty() || m.hidden.W.empty() || m.w_out.empty())
      fail(ErrorCode::Format, "checkpoint is missing a frozen weight block");
    if (m.hidden.subtract_init && (m.hidden.A0.empty() || m.hidden.B0.empty()))
      fail(ErrorCode::Format, "checkpoint declares subtract_init without lora_a0/lora_b0");
    if (meta) {
      meta->scheme = h.value("scheme", std::string("none"));
      meta->seed = h.value("seed", std::uint64_t{0});
      meta->step = h.value("step", 0L);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, std::string("checkpoint header: ") + e.what());
  }
  if (offset != bytes.size()) fail(ErrorCode::Format, "checkpoint has trailing bytes after the declared blocks");
  return m;
}

}  // namespace loradyn
