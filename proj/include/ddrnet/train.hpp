#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ddrnet/model.hpp"
#include "ddrnet/nn/optim.hpp"
#include "ddrnet/sceneio.hpp"

namespace ddrnet {

// min(1, 0.05 * 2^floor(epoch / 50))
double empty_weight(std::size_t epoch);

struct PlateauRule {
  double initial_lr = 0.01;
  double threshold = 1e-4;  // absolute change of the epoch-mean loss
  std::size_t window = 5;   // consecutive sub-threshold changes that trigger a drop
  double factor = 10.0;
};

// Number of drops the rule has fired over `history`.
std::size_t lr_drops(const std::vector<double>& history, const PlateauRule& rule = {});
// initial_lr / factor^drops
double lr_schedule(const std::vector<double>& history, const PlateauRule& rule = {});

// Generator settings matching a network's image size and output grid.
GenConfig gen_config_for(const NetworkConfig& cfg);

struct Dataset {
  std::vector<std::string> names;
  std::vector<SceneSample> samples;
};
// Loads every manifest entry with the given split tag ("" = all).
Dataset load_dataset(const std::string& dir, const std::string& split = "train");

// Named tensor records: "CKPT", version, u32 count, then per record a u16
// name length, the name bytes and an embedded TNSR record.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
void save_checkpoint(const std::string& path, const NamedTensors& records);
NamedTensors load_checkpoint(const std::string& path);

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 2;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  PlateauRule plateau;
  std::string out_dir;  // empty: no files written
  bool verbose = false;
};

struct TrainState {
  std::size_t epoch = 0;  // epochs completed
  std::vector<double> loss_history;
  double lr = 0.01;
  double empty_weight = 0.05;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double empty_weight = 0.0;
  double seconds = 0.0;
};

class Trainer {
 public:
  Trainer(const NetworkConfig& cfg, const TrainOptions& opt);
  // Restores network, velocities and schedule state; `opt` supplies the run
  // length and output directory.
  static std::unique_ptr<Trainer> resume(const std::string& checkpoint, const TrainOptions& opt);

  // One pass over the data in order, batches of batch_size. Appends the
  // epoch-mean loss to the history. Throws NumericalError (after dumping
  // abort.ckpt into out_dir) on a non-finite loss.
  EpochRecord train_epoch(const Dataset& data);
  // Trains until `epochs` epochs are completed, writing checkpoint.ckpt,
  // log.tsv, log.json and timing.tsv to out_dir after every epoch.
  void fit(const Dataset& data, const std::function<void(const EpochRecord&)>& on_epoch = {});

  NamedTensors checkpoint_records() const;
  void save(const std::string& path) const;

  Network& network() { return *net_; }
  const Network& network() const { return *net_; }
  const TrainState& state() const { return state_; }
  const TrainOptions& options() const { return opt_; }

 private:
  void write_logs() const;

  NetworkConfig cfg_;
  TrainOptions opt_;
  std::unique_ptr<Network> net_;
  nn::Sgd sgd_;
  TrainState state_;
};

// Predicted labels for one sample.
Tensor predict_sample(const Network& net, const SceneSample& sample);
// Pooled metrics over a dataset.
MetricsReport evaluate_dataset(const Network& net, const Dataset& data);

// Network weights from a checkpoint (config taken from the checkpoint).
std::unique_ptr<Network> load_network(const std::string& checkpoint);

}  // namespace ddrnet
