#include "csa/model.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace csa {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::kCsa: return "CSA";
    case Mode::kCsaInfo: return "CSA-INFO";
    case Mode::kAftLogNormal: return "AFT-LN";
    case Mode::kAftWeibull: return "AFT-W";
    case Mode::kSr: return "SR";
  }
  return "?";
}

Mode parse_mode(const std::string& s) {
  for (Mode m : {Mode::kCsa, Mode::kCsaInfo, Mode::kAftLogNormal, Mode::kAftWeibull, Mode::kSr}) {
    if (s == mode_name(m)) return m;
  }
  throw Error("unknown mode '" + s + "' (expected CSA, CSA-INFO, AFT-LN, AFT-W or SR)");
}

std::vector<Mode> parse_modes(const std::string& comma_list) {
  std::vector<Mode> out;
  std::stringstream ss(comma_list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(parse_mode(item));
  }
  if (out.empty()) throw Error("empty mode list");
  return out;
}

bool has_censor_head(Mode m) { return m == Mode::kCsaInfo; }
bool is_aft(Mode m) { return m == Mode::kAftLogNormal || m == Mode::kAftWeibull; }

void Architecture::validate() const {
  if (hidden < 1 || latent < 1 || head_hidden < 1 || head_joint < 1 || noise_dim < 1) {
    throw Error("Architecture: all widths must be positive");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error("Architecture: dropout must lie in [0,1)");
  if (!(bn_momentum >= 0.0 && bn_momentum < 1.0)) {
    throw Error("Architecture: bn_momentum must lie in [0,1)");
  }
}

Json Architecture::to_json() const {
  return {{"hidden", hidden},           {"latent", latent},
          {"head_hidden", head_hidden}, {"head_joint", head_joint},
          {"noise_dim", noise_dim},     {"dropout", dropout},
          {"leaky_slope", leaky_slope}, {"bn_momentum", bn_momentum},
          {"gaussian_noise", gaussian_noise}};
}

Architecture Architecture::from_json(const Json& j) {
  Architecture a;
  a.hidden = j.value("hidden", a.hidden);
  a.latent = j.value("latent", a.latent);
  a.head_hidden = j.value("head_hidden", a.head_hidden);
  a.head_joint = j.value("head_joint", a.head_joint);
  a.noise_dim = j.value("noise_dim", a.noise_dim);
  a.dropout = j.value("dropout", a.dropout);
  a.leaky_slope = j.value("leaky_slope", a.leaky_slope);
  a.bn_momentum = j.value("bn_momentum", a.bn_momentum);
  a.gaussian_noise = j.value("gaussian_noise", a.gaussian_noise);
  a.validate();
  return a;
}

Model::Model(Mode mode, Eigen::Index input_dim, Architecture arch, double time_scale)
    : mode_(mode), input_dim_(input_dim), arch_(arch), time_scale_(time_scale) {
  arch_.validate();
  if (input_dim < 1) throw Error("Model: input dimension must be positive");
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) {
    throw Error("Model: time scale must be positive and finite");
  }
  enc1_ = add_block("encoder.0", input_dim, arch_.hidden);
  enc2_ = add_block("encoder.1", arch_.hidden, arch_.latent);
  const Eigen::Index dn = arch_.noise_dim;
  if (mode == Mode::kCsa || mode == Mode::kCsaInfo) {
    const int roles = has_censor_head(mode) ? 2 : 1;
    for (int r = 0; r < roles; ++r) {
      const std::string role = r == 0 ? "event" : "censor";
      Flow& f = flows_[static_cast<std::size_t>(r)];
      f.u = params_.add("flow." + role + ".U", dn, dn);
      f.w = params_.add("flow." + role + ".W", dn, dn);
      f.b = params_.add("flow." + role + ".b", 1, dn);
      for (int a = 0; a < 2; ++a) {
        const std::string p = "head." + role + ".arm" + std::to_string(a);
        SampleHead& h = sample_[static_cast<std::size_t>(r)][static_cast<std::size_t>(a)];
        h.first = add_block(p + ".first", arch_.latent, arch_.head_hidden);
        h.joint = add_block(p + ".joint", arch_.head_hidden + dn, arch_.head_joint);
        h.out = add_dense(p + ".out", arch_.head_joint, 1);
      }
    }
  } else {
    const Eigen::Index outputs = is_aft(mode) ? 2 : 1;
    for (int a = 0; a < 2; ++a) {
      const std::string p = std::string(is_aft(mode) ? "aft" : "sr") + ".arm" + std::to_string(a);
      PointHead& h = point_[static_cast<std::size_t>(a)];
      h.first = add_block(p + ".first", arch_.latent, arch_.head_hidden);
      h.out = add_dense(p + ".out", arch_.head_hidden, outputs);
    }
  }
  initialize(0);
}

Model::Dense Model::add_dense(const std::string& name, Eigen::Index in, Eigen::Index out) {
  Dense d;
  d.weight = params_.add(name + ".weight", out, in);
  d.bias = params_.add(name + ".bias", 1, out);
  return d;
}

Model::Block Model::add_block(const std::string& name, Eigen::Index in, Eigen::Index out) {
  Block b;
  b.dense = add_dense(name, in, out);
  b.norm.gamma = params_.add(name + ".bn.gamma", 1, out);
  b.norm.beta = params_.add(name + ".bn.beta", 1, out);
  b.norm.mean = buffers_.add(name + ".bn.mean", 1, out);
  b.norm.var = buffers_.add(name + ".bn.var", 1, out);
  return b;
}

void Model::initialize(std::uint64_t seed, double range) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params_.tensors().size(); ++i) {
    const std::string& name = params_.tensors()[i].name;
    auto v = params_.view(i);
    if (name.ends_with(".bn.gamma")) {
      v.setOnes();
    } else if (name.ends_with(".bn.beta")) {
      v.setZero();
    } else {
      for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = (2.0 * rng.uniform() - 1.0) * range;
    }
  }
  for (std::size_t i = 0; i < buffers_.tensors().size(); ++i) {
    const std::string& name = buffers_.tensors()[i].name;
    if (name.ends_with(".var")) buffers_.view(i).setOnes(); else buffers_.view(i).setZero();
  }
}

Var Model::apply_dense(Tape& tape, Var x, const Dense& d) const {
  return tape.affine(x, tape.parameter(params_, d.weight), tape.parameter(params_, d.bias));
}

Var Model::apply_block(Tape& tape, Var x, const Block& b, Phase phase, Rng* rng,
                       ParameterSet* update) const {
  const bool training = phase == Phase::kTrain;
  Var h = apply_dense(tape, x, b.dense);
  Tape::RunningMoments m;
  m.mean = buffers_.view(b.norm.mean).data();
  m.var = buffers_.view(b.norm.var).data();
  if (update != nullptr) {
    m.update_mean = update->view(b.norm.mean).data();
    m.update_var = update->view(b.norm.var).data();
  }
  m.momentum = arch_.bn_momentum;
  h = tape.batch_norm(h, tape.parameter(params_, b.norm.gamma), tape.parameter(params_, b.norm.beta),
                      training, m);
  h = tape.leaky_relu(h, arch_.leaky_slope);
  if (training && arch_.dropout > 0.0) {
    if (rng == nullptr) throw Error("Model: training phase needs a noise stream for dropout");
    const auto& v = tape.value(h);
    const double keep = 1.0 - arch_.dropout;
    RowMatrix mask(v.rows(), v.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    }
    h = tape.mask(h, mask);
  }
  return h;
}

Var Model::positive_time(Tape& tape, Var z) const {
  Var shifted = tape.add_scalar(z, std::log(time_scale_));
  const double top = tape.value(shifted).maxCoeff();
  if (!(top < 700.0)) {
    throw Error("exponential output overflow: pre-activation " + format_double(top));
  }
  return tape.exp(shifted);
}

Var Model::encode(Tape& tape, Var x, Phase phase, Rng* rng, ParameterSet* update) const {
  if (!tape.value(x).allFinite()) throw Error("encode: non-finite covariate input");
  if (tape.value(x).cols() != input_dim_) throw Error("encode: covariate dimension mismatch");
  Var h = apply_block(tape, x, enc1_, phase, rng, update);
  return apply_block(tape, h, enc2_, phase, rng, update);
}

Var Model::planar(Tape& tape, Var noise, Role role) const {
  if (mode_ != Mode::kCsa && mode_ != Mode::kCsaInfo) throw Error("planar: no flow in this mode");
  if (role == Role::kCensor && !has_censor_head(mode_)) throw Error("planar: no censoring flow");
  const Flow& f = flows_[static_cast<std::size_t>(role)];
  Var inner = tape.affine(noise, tape.parameter(params_, f.w), tape.parameter(params_, f.b));
  Var skip = tape.matmul_nt(tape.tanh(inner), tape.parameter(params_, f.u));
  return tape.add(noise, skip);
}

Var Model::sample_head(Tape& tape, Var latent, Var noise, int arm, Role role, Phase phase,
                       Rng* rng, ParameterSet* update) const {
  if (arm != 0 && arm != 1) throw Error("sample_head: arm must be 0 or 1");
  Var transformed = planar(tape, noise, role);
  const SampleHead& h = sample_[static_cast<std::size_t>(role)][static_cast<std::size_t>(arm)];
  Var first = apply_block(tape, latent, h.first, phase, rng, update);
  Var joint = apply_block(tape, tape.concat_cols(first, transformed), h.joint, phase, rng, update);
  return positive_time(tape, apply_dense(tape, joint, h.out));
}

std::pair<Var, Var> Model::aft_head(Tape& tape, Var latent, int arm, Phase phase, Rng* rng,
                                    ParameterSet* update) const {
  if (!is_aft(mode_)) throw Error("aft_head: model is not in an AFT mode");
  if (arm != 0 && arm != 1) throw Error("aft_head: arm must be 0 or 1");
  const PointHead& h = point_[static_cast<std::size_t>(arm)];
  Var out = apply_dense(tape, apply_block(tape, latent, h.first, phase, rng, update), h.out);
  if (!tape.value(out).allFinite()) throw Error("aft_head: non-finite distribution parameter");
  Var a = tape.slice_cols(out, 0, 1);
  Var b = tape.softplus(tape.slice_cols(out, 1, 1));
  if (mode_ == Mode::kAftLogNormal) {
    a = tape.add_scalar(a, std::log(time_scale_));
  } else {
    a = tape.scale(tape.softplus(a), time_scale_);
  }
  return {a, b};
}

Var Model::sr_head(Tape& tape, Var latent, int arm, Phase phase, Rng* rng,
                   ParameterSet* update) const {
  if (mode_ != Mode::kSr) throw Error("sr_head: model is not in SR mode");
  if (arm != 0 && arm != 1) throw Error("sr_head: arm must be 0 or 1");
  const PointHead& h = point_[static_cast<std::size_t>(arm)];
  Var out = apply_dense(tape, apply_block(tape, latent, h.first, phase, rng, update), h.out);
  return positive_time(tape, out);
}

RowMatrix Model::draw_noise(Eigen::Index n, Rng& rng) const {
  RowMatrix e(n, arch_.noise_dim);
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    e.data()[i] = arch_.gaussian_noise ? rng.normal() : rng.uniform();
  }
  return e;
}

namespace {

RowMatrix take_rows(const RowMatrix& m, const std::vector<Eigen::Index>& rows) {
  RowMatrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
  return out;
}

// Noise comes from `noise` when given (one row per batch subject), else from rng.
BatchForward forward_impl(const Model& m, Tape& tape, const RowMatrix& x,
                          std::span<const int> arms, Phase phase, Rng& rng,
                          ParameterSet* update, const RowMatrix* event_noise = nullptr,
                          const RowMatrix* censor_noise = nullptr) {
  if (static_cast<Eigen::Index>(arms.size()) != x.rows()) {
    throw Error("forward: one arm label per row required");
  }
  BatchForward out;
  out.latent = m.encode(tape, tape.constant(x), phase, &rng, update);
  for (int a = 0; a < 2; ++a) {
    ArmOutput& o = out.arms[static_cast<std::size_t>(a)];
    for (std::size_t i = 0; i < arms.size(); ++i) {
      if (arms[i] != 0 && arms[i] != 1) throw Error("forward: arm labels must be 0 or 1");
      if (arms[i] == a) o.rows.push_back(static_cast<Eigen::Index>(i));
    }
    if (o.rows.empty()) continue;
    Var r = tape.gather_rows(out.latent, o.rows);
    const auto n = static_cast<Eigen::Index>(o.rows.size());
    switch (m.mode()) {
      case Mode::kCsa:
      case Mode::kCsaInfo:
        o.event = m.sample_head(
            tape, r,
            tape.constant(event_noise ? take_rows(*event_noise, o.rows) : m.draw_noise(n, rng)),
            a, Role::kEvent, phase, &rng, update);
        if (has_censor_head(m.mode())) {
          o.censor = m.sample_head(
              tape, r,
              tape.constant(censor_noise ? take_rows(*censor_noise, o.rows) : m.draw_noise(n, rng)),
              a, Role::kCensor, phase, &rng, update);
        }
        break;
      case Mode::kAftLogNormal:
      case Mode::kAftWeibull:
        std::tie(o.param_a, o.param_b) = m.aft_head(tape, r, a, phase, &rng, update);
        break;
      case Mode::kSr:
        o.event = m.sr_head(tape, r, a, phase, &rng, update);
        break;
    }
  }
  return out;
}

}  // namespace

BatchForward Model::forward(Tape& tape, const RowMatrix& x, std::span<const int> arms,
                            Phase phase, Rng& rng, bool update_running) {
  return forward_impl(*this, tape, x, arms, phase, rng, update_running ? &buffers_ : nullptr);
}

BatchForward Model::forward(Tape& tape, const RowMatrix& x, std::span<const int> arms,
                            Phase phase, Rng& rng) const {
  return forward_impl(*this, tape, x, arms, phase, rng, nullptr);
}

BatchForward Model::forward_eval(Tape& tape, const RowMatrix& x, std::span<const int> arms,
                                 const RowMatrix& event_noise,
                                 const RowMatrix& censor_noise) const {
  const bool sampling = mode_ == Mode::kCsa || mode_ == Mode::kCsaInfo;
  if (sampling && (event_noise.rows() != x.rows() || event_noise.cols() != arch_.noise_dim)) {
    throw Error("forward_eval: event noise must have one row per subject");
  }
  if (has_censor_head(mode_) &&
      (censor_noise.rows() != x.rows() || censor_noise.cols() != arch_.noise_dim)) {
    throw Error("forward_eval: censoring noise must have one row per subject");
  }
  Rng unused(0);
  return forward_impl(*this, tape, x, arms, Phase::kEval, unused, nullptr, &event_noise,
                      &censor_noise);
}

RowMatrix Model::encode(const RowMatrix& x, Phase phase, Rng* rng) const {
  Tape tape;
  return tape.value(encode(tape, tape.constant(x), phase, rng, nullptr));
}

RowMatrix Model::planar_transform(const RowMatrix& noise, Role role) const {
  Tape tape;
  return tape.value(planar(tape, tape.constant(noise), role));
}

Eigen::VectorXd Model::sample_time(const RowMatrix& latent, int arm, Role role,
                                   const RowMatrix& noise, Phase phase, Rng* rng) const {
  Tape tape;
  Var t = sample_head(tape, tape.constant(latent), tape.constant(noise), arm, role, phase, rng,
                      nullptr);
  return tape.value(t).col(0);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> Model::aft_forward(const RowMatrix& latent,
                                                              int arm) const {
  Tape tape;
  auto [a, b] = aft_head(tape, tape.constant(latent), arm, Phase::kEval, nullptr, nullptr);
  return {tape.value(a).col(0), tape.value(b).col(0)};
}

Eigen::VectorXd Model::sr_forward(const RowMatrix& latent, int arm) const {
  Tape tape;
  return tape.value(sr_head(tape, tape.constant(latent), arm, Phase::kEval, nullptr, nullptr))
      .col(0);
}

EventTimeSamples Model::sample_potential_outcomes(const RowMatrix& x, std::size_t draws,
                                                  std::uint64_t seed) const {
  if (draws < 1) throw Error("sample_potential_outcomes: need at least one draw");
  const Eigen::Index n = x.rows();
  const auto s_count = static_cast<Eigen::Index>(draws);
  EventTimeSamples out;
  const RowMatrix latent = encode(x, Phase::kEval);
  for (int a = 0; a < 2; ++a) {
    RowMatrix& dst = out.arm[a];
    dst.resize(n, s_count);
    const auto stream_base = static_cast<std::uint64_t>(a + 1) << 32;
    if (mode_ == Mode::kSr) {
      const Eigen::VectorXd t = sr_forward(latent, a);
      for (Eigen::Index s = 0; s < s_count; ++s) dst.col(s) = t;
      continue;
    }
    if (is_aft(mode_)) {
      const auto [pa, pb] = aft_forward(latent, a);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index s = 0; s < s_count; ++s) {
          Rng rng = Rng::substream(seed, stream_base | static_cast<std::uint64_t>(s),
                                   static_cast<std::uint64_t>(i));
          dst(i, s) = mode_ == Mode::kAftLogNormal
                          ? std::exp(pa[i] + pb[i] * rng.normal())
                          : pa[i] * std::pow(-std::log(rng.uniform_open_low()), 1.0 / pb[i]);
        }
      }
      continue;
    }
    Tape base;
    const SampleHead& h = sample_[0][static_cast<std::size_t>(a)];
    const Var first = apply_block(base, base.constant(latent), h.first, Phase::kEval, nullptr, nullptr);
    const RowMatrix first_value = base.value(first);
    for (Eigen::Index s = 0; s < s_count; ++s) {
      RowMatrix noise(n, arch_.noise_dim);
      for (Eigen::Index i = 0; i < n; ++i) {
        Rng rng = Rng::substream(seed, stream_base | static_cast<std::uint64_t>(s),
                                 static_cast<std::uint64_t>(i));
        noise.row(i) = draw_noise(1, rng);
      }
      Tape tape;
      Var transformed = planar(tape, tape.constant(noise), Role::kEvent);
      Var joint = apply_block(tape, tape.concat_cols(tape.constant(first_value), transformed),
                              h.joint, Phase::kEval, nullptr, nullptr);
      dst.col(s) = tape.value(positive_time(tape, apply_dense(tape, joint, h.out))).col(0);
    }
  }
  return out;
}

namespace {

constexpr char kMagic[8] = {'C', 'S', 'A', 'C', 'K', 'P', 'T', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw Error("checkpoint truncated");
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + b])) << (8 * b);
  }
  pos += 8;
  return v;
}

Json layout_json(const ParameterSet& p) {
  Json a = Json::array();
  for (const auto& t : p.tensors()) a.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  return a;
}

void check_layout(const ParameterSet& p, const Json& j, const char* what) {
  const auto& ts = p.tensors();
  if (j.size() != ts.size()) throw Error(std::string("checkpoint ") + what + " count mismatch");
  for (std::size_t i = 0; i < ts.size(); ++i) {
    if (j[i].at("name").get<std::string>() != ts[i].name ||
        j[i].at("rows").get<Eigen::Index>() != ts[i].rows ||
        j[i].at("cols").get<Eigen::Index>() != ts[i].cols) {
      throw Error(std::string("checkpoint ") + what + " shape mismatch at " + ts[i].name);
    }
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const Json& extra) {
  Json manifest = {{"schema_version", kSchemaVersion},
                   {"mode", mode_name(model.mode())},
                   {"input_dim", model.input_dim()},
                   {"time_scale", model.time_scale()},
                   {"architecture", model.architecture().to_json()},
                   {"parameters", layout_json(model.params())},
                   {"buffers", layout_json(model.buffers())},
                   {"extra", extra}};
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_u64(out, text.size());
  out += text;
  const auto& p = model.params().values();
  const auto& b = model.buffers().values();
  put_u64(out, static_cast<std::uint64_t>(p.size() + b.size()));
  for (Eigen::Index i = 0; i < p.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(p[i]));
  for (Eigen::Index i = 0; i < b.size(); ++i) put_u64(out, std::bit_cast<std::uint64_t>(b[i]));
  write_file_atomic(path, out);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < sizeof(kMagic) || std::memcmp(data.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a checkpoint file: " + path.string());
  }
  std::size_t pos = sizeof(kMagic);
  const std::uint64_t len = get_u64(data, pos);
  if (pos + len > data.size()) throw Error("checkpoint truncated");
  Json manifest;
  try {
    manifest = Json::parse(data.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  pos += len;
  if (manifest.value("schema_version", 0) != kSchemaVersion) {
    throw Error("unsupported checkpoint schema version");
  }
  Model model(parse_mode(manifest.at("mode").get<std::string>()),
              manifest.at("input_dim").get<Eigen::Index>(),
              Architecture::from_json(manifest.at("architecture")),
              manifest.at("time_scale").get<double>());
  check_layout(model.params(), manifest.at("parameters"), "parameter");
  check_layout(model.buffers(), manifest.at("buffers"), "buffer");
  const std::uint64_t count = get_u64(data, pos);
  auto& p = model.params().values();
  auto& b = model.buffers().values();
  if (count != static_cast<std::uint64_t>(p.size() + b.size())) {
    throw Error("checkpoint value count mismatch");
  }
  for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = std::bit_cast<double>(get_u64(data, pos));
  for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = std::bit_cast<double>(get_u64(data, pos));
  return {std::move(model), manifest.value("extra", Json::object())};
}

}  // namespace csa
