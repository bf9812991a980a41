#include "ddrnet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <json.hpp>

namespace ddrnet {

namespace fs = std::filesystem;
using json = nlohmann::json;

double empty_weight(std::size_t epoch) {
  const std::size_t doublings = epoch / 50;
  if (doublings >= 5) return 1.0;  // 0.05 * 2^5 > 1
  return std::min(1.0, std::ldexp(0.05, static_cast<int>(doublings)));
}

std::size_t lr_drops(const std::vector<double>& history, const PlateauRule& rule) {
  std::size_t drops = 0, run = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    run = std::abs(history[i] - history[i - 1]) < rule.threshold ? run + 1 : 0;
    if (run >= rule.window) {
      ++drops;
      run = 0;
    }
  }
  return drops;
}

double lr_schedule(const std::vector<double>& history, const PlateauRule& rule) {
  double lr = rule.initial_lr;
  for (std::size_t i = lr_drops(history, rule); i > 0; --i) lr /= rule.factor;
  return lr;
}

GenConfig gen_config_for(const NetworkConfig& cfg) {
  GenConfig g;
  g.image_height = cfg.image_height;
  g.image_width = cfg.image_width;
  g.label_grid = cfg.output_grid();
  return g;
}

Dataset load_dataset(const std::string& dir, const std::string& split) {
  const Manifest m = read_manifest(dir);
  Dataset d;
  for (const ManifestEntry& e : m.samples) {
    if (!split.empty() && e.split != split) continue;
    d.names.push_back(e.path);
    d.samples.push_back(read_sample((fs::path(dir) / e.path).string()));
  }
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoint records

namespace {

constexpr char kCkptMagic[4] = {'C', 'K', 'P', 'T'};
constexpr std::uint8_t kCkptVersion = 1;

template <typename T>
void put_le(std::ostream& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(std::istream& in, const std::string& path, const char* what) {
  const std::streamoff at = in.tellg();
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
    throw FormatError(path + ": truncated checkpoint at offset " + std::to_string(at) + " reading " + what);
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

Tensor text_tensor(const std::string& s) {
  Tensor t(Shape{s.size()}, 0.0, DType::UInt8);
  for (std::size_t i = 0; i < s.size(); ++i) t[i] = static_cast<unsigned char>(s[i]);
  return t;
}

std::string tensor_text(const Tensor& t) {
  std::string s(t.size(), '\0');
  for (std::size_t i = 0; i < t.size(); ++i) s[i] = static_cast<char>(static_cast<unsigned char>(t[i]));
  return s;
}

const Tensor& find_record(const NamedTensors& records, const std::string& name, const std::string& path) {
  for (const auto& [n, t] : records) {
    if (n == name) return t;
  }
  throw FormatError(path + ": checkpoint has no record '" + name + "'");
}

// [X,Y,Z] tensors -> [N,X,Y,Z]
Tensor stack(const std::vector<const Tensor*>& parts) {
  Shape shape = parts.front()->shape();
  shape.insert(shape.begin(), parts.size());
  std::vector<double> data;
  data.reserve(shape_volume(shape));
  for (const Tensor* t : parts) {
    if (t->shape() != parts.front()->shape()) throw ShapeError("train: batch samples differ in grid shape");
    data.insert(data.end(), t->data().begin(), t->data().end());
  }
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedTensors& records) {
  // Write to a sibling file and rename so a crash never leaves a torn checkpoint.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + tmp);
    out.write(kCkptMagic, 4);
    put_le<std::uint8_t>(out, kCkptVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, tensor] : records) {
      if (name.size() > 0xffff) throw FormatError("checkpoint record name too long");
      put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_tnsr(out, tensor);
    }
    if (!out) throw FormatError("checkpoint write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0) {
    throw FormatError(path + ": checkpoint format error at offset 0: bad magic");
  }
  const auto version = get_le<std::uint8_t>(in, path, "version");
  if (version != kCkptVersion) {
    throw FormatError(path + ": checkpoint format error at offset 4: unsupported version " + std::to_string(version));
  }
  const auto count = get_le<std::uint32_t>(in, path, "record count");
  NamedTensors records;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get_le<std::uint16_t>(in, path, "name length");
    std::string name(len, '\0');
    const std::streamoff at = in.tellg();
    if (!in.read(name.data(), len)) throw FormatError(path + ": truncated checkpoint at offset " + std::to_string(at));
    try {
      records.emplace_back(std::move(name), read_tnsr(in));
    } catch (const FormatError& e) {
      throw FormatError(path + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(const NetworkConfig& cfg, const TrainOptions& opt)
    : cfg_(cfg), opt_(opt), net_(std::make_unique<Network>(cfg)), sgd_(net_->params(), opt.momentum, opt.weight_decay) {
  if (opt_.batch_size == 0) throw ConfigError("train: batch size must be positive");
  state_.seed = cfg_.init_seed;
  state_.lr = opt_.plateau.initial_lr;
  state_.empty_weight = empty_weight(0);
}

NamedTensors Trainer::checkpoint_records() const {
  NamedTensors r;
  r.emplace_back("state/config", text_tensor(config_to_json(cfg_)));
  const auto& params = net_->params().parameters();
  for (const nn::NamedParameter& p : params) r.emplace_back(p.name, p.var->value);
  for (std::size_t i = 0; i < params.size(); ++i) r.emplace_back("velocity/" + params[i].name, sgd_.velocities()[i]);
  r.emplace_back("state/epoch", Tensor(Shape{1}, static_cast<double>(state_.epoch)));
  if (!state_.loss_history.empty()) {
    r.emplace_back("state/loss_history", Tensor(Shape{state_.loss_history.size()}, state_.loss_history));
  }
  r.emplace_back("state/lr", Tensor(Shape{1}, state_.lr));
  r.emplace_back("state/empty_weight", Tensor(Shape{1}, state_.empty_weight));
  // Two 32-bit halves keep the seed exact in double storage.
  r.emplace_back("state/seed", Tensor(Shape{2}, std::vector<double>{static_cast<double>(state_.seed >> 32),
                                                                    static_cast<double>(state_.seed & 0xffffffffu)}));
  return r;
}

void Trainer::save(const std::string& path) const { save_checkpoint(path, checkpoint_records()); }

std::unique_ptr<Trainer> Trainer::resume(const std::string& checkpoint, const TrainOptions& opt) {
  const NamedTensors records = load_checkpoint(checkpoint);
  const NetworkConfig cfg = config_from_json(tensor_text(find_record(records, "state/config", checkpoint)));
  auto t = std::make_unique<Trainer>(cfg, opt);
  const auto& params = t->net_->params().parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& value = find_record(records, params[i].name, checkpoint);
    const Tensor& velocity = find_record(records, "velocity/" + params[i].name, checkpoint);
    if (value.shape() != params[i].var->value.shape() || velocity.shape() != value.shape()) {
      throw FormatError(checkpoint + ": shape mismatch for " + params[i].name);
    }
    params[i].var->value = value;
    t->sgd_.velocities()[i] = velocity;
  }
  TrainState& s = t->state_;
  s.epoch = static_cast<std::size_t>(find_record(records, "state/epoch", checkpoint)[0]);
  for (const auto& [name, tensor] : records) {
    if (name == "state/loss_history") s.loss_history.assign(tensor.data().begin(), tensor.data().end());
  }
  if (s.loss_history.size() != s.epoch) throw FormatError(checkpoint + ": loss history length does not match epoch");
  s.lr = find_record(records, "state/lr", checkpoint)[0];
  s.empty_weight = find_record(records, "state/empty_weight", checkpoint)[0];
  const Tensor& seed = find_record(records, "state/seed", checkpoint);
  s.seed = (static_cast<std::uint64_t>(seed[0]) << 32) | static_cast<std::uint64_t>(seed[1]);
  return t;
}

EpochRecord Trainer::train_epoch(const Dataset& data) {
  if (data.samples.empty()) throw ConfigError("train: dataset is empty");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t epoch = state_.epoch;
  state_.lr = lr_schedule(state_.loss_history, opt_.plateau);
  state_.empty_weight = empty_weight(epoch);

  double loss_sum = 0.0;
  std::size_t steps = 0;
  std::size_t begin = 0;
  try {
    for (; begin < data.samples.size(); begin += opt_.batch_size) {
      const std::size_t end = std::min(begin + opt_.batch_size, data.samples.size());
      std::vector<nn::Var> logits;
      std::vector<const Tensor*> labels, masks;
      std::vector<nn::LossWeights> weights;
      for (std::size_t i = begin; i < end; ++i) {
        const SceneSample& s = data.samples[i];
        logits.push_back(net_->forward(s.rgb, s.depth, s.intrinsics));
        weights.push_back(loss_weights(s.labels, s.masks, state_.empty_weight, cfg_.num_classes));
        labels.push_back(&s.labels);
      }
      for (const nn::LossWeights& w : weights) masks.push_back(&w.mask);
      nn::LossWeights w;
      w.class_weights = weights.front().class_weights;
      w.mask = stack(masks);
      nn::Var loss = nn::softmax_ce(nn::concat(logits, 0), stack(labels), w);
      const double value = loss->value[0];
      if (!std::isfinite(value)) throw NumericalError("non-finite loss");
      net_->params().zero_grad();
      nn::backward(loss);
      sgd_.step(net_->params(), state_.lr);
      loss_sum += value;
      ++steps;
    }
  } catch (const NumericalError& e) {
    // Dump whatever state we reached for post-mortem inspection.
    if (!opt_.out_dir.empty()) {
      fs::create_directories(opt_.out_dir);
      save((fs::path(opt_.out_dir) / "abort.ckpt").string());
    }
    const std::string at = begin < data.names.size() ? data.names[begin] : "sample " + std::to_string(begin);
    throw NumericalError("train: epoch " + std::to_string(epoch) + ", batch starting at " + at + ": " + e.what());
  }
  const double mean = loss_sum / static_cast<double>(steps);
  state_.loss_history.push_back(mean);
  state_.epoch = epoch + 1;
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {epoch, mean, state_.lr, state_.empty_weight, seconds};
}

void Trainer::write_logs() const {
  const fs::path dir(opt_.out_dir);
  std::ofstream tsv(dir / "log.tsv", std::ios::trunc);
  tsv << "epoch\tloss\tlr\tw_empty\n";
  json rows = json::array();
  std::vector<double> prefix;
  for (std::size_t e = 0; e < state_.loss_history.size(); ++e) {
    const double lr = lr_schedule(prefix, opt_.plateau);
    const double w = empty_weight(e);
    const double loss = state_.loss_history[e];
    std::ostringstream line;
    line << e << '\t' << std::setprecision(17) << loss << '\t' << lr << '\t' << w << '\n';
    tsv << line.str();
    rows.push_back({{"epoch", e}, {"loss", loss}, {"lr", lr}, {"w_empty", w}});
    prefix.push_back(loss);
  }
  std::ofstream js(dir / "log.json", std::ios::trunc);
  js << rows.dump(2) << "\n";
  if (!tsv || !js) throw FormatError("cannot write logs in " + opt_.out_dir);
}

void Trainer::fit(const Dataset& data, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (!opt_.out_dir.empty()) {
    fs::create_directories(opt_.out_dir);
    std::ofstream(fs::path(opt_.out_dir) / "config.json") << config_to_json(cfg_);
  }
  while (state_.epoch < opt_.epochs) {
    const EpochRecord rec = train_epoch(data);
    if (!opt_.out_dir.empty()) {
      const fs::path dir(opt_.out_dir);
      save((dir / "checkpoint.ckpt").string());
      write_logs();
      std::ofstream timing(dir / "timing.tsv", std::ios::app);
      timing << rec.epoch << '\t' << rec.seconds << '\n';
    }
    if (opt_.verbose) {
      std::cout << "epoch " << rec.epoch << " loss " << std::setprecision(6) << rec.loss << " lr " << rec.lr
                << " w_empty " << rec.empty_weight << " (" << std::setprecision(3) << rec.seconds << " s)" << std::endl;
    }
    if (on_epoch) on_epoch(rec);
  }
}

Tensor predict_sample(const Network& net, const SceneSample& sample) {
  return predict_labels(net.forward(sample.rgb, sample.depth, sample.intrinsics)->value);
}

MetricsReport evaluate_dataset(const Network& net, const Dataset& data) {
  MetricsAccumulator acc;
  for (const SceneSample& s : data.samples) acc.add(predict_sample(net, s), s.labels, s.masks);
  return acc.report();
}

std::unique_ptr<Network> load_network(const std::string& checkpoint) {
  const NamedTensors records = load_checkpoint(checkpoint);
  const NetworkConfig cfg = config_from_json(tensor_text(find_record(records, "state/config", checkpoint)));
  auto net = std::make_unique<Network>(cfg);
  for (const nn::NamedParameter& p : net->params().parameters()) {
    const Tensor& value = find_record(records, p.name, checkpoint);
    if (value.shape() != p.var->value.shape()) throw FormatError(checkpoint + ": shape mismatch for " + p.name);
    p.var->value = value;
  }
  return net;
}

}  // namespace ddrnet
