// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <sstream>
#include <string>

#include "ddrnet/checks.hpp"
#include "ddrnet/ddr.hpp"
#include "ddrnet/model.hpp"
#include "ddrnet/nn/instrument.hpp"
#include "ddrnet/nn/kernels.hpp"
#include "ddrnet/projection.hpp"
#include "ddrnet/train.hpp"

namespace fs = std::filesystem;
using namespace ddrnet;
using namespace ddrnet::nn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& id, const std::function<Outcome()>& check) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!o.pass) ++failures;
  std::ostringstream line;
  line.setf(std::ios::fixed);
  line.precision(2);
  line << "criterion " << id << ": " << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << s << " s]";
  std::cout << line.str() << std::endl;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CameraIntrinsics facing(const NetworkConfig& cfg) {
  CameraIntrinsics intr;
  const double extent = cfg.grid.voxel_size * static_cast<double>(cfg.grid.dims[0]);
  intr.fx = static_cast<double>(cfg.image_width);
  intr.fy = static_cast<double>(cfg.image_height);
  intr.cx = (static_cast<double>(cfg.image_width) - 1.0) / 2.0;
  intr.cy = (static_cast<double>(cfg.image_height) - 1.0) / 2.0;
  intr.translation = {cfg.grid.origin[0] + extent / 2, cfg.grid.origin[1] + extent / 2, cfg.grid.origin[2]};
  return intr;
}

// ---------------------------------------------------------------------------

Outcome decomposition_ratio() {
  Rng rng(101);
  const auto start = std::chrono::steady_clock::now();
  std::size_t checked = 0;
  for (std::size_t k : {3u, 5u, 7u}) {
    const Fraction expect = reduced(3 * k, k * k * k);
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t c = 1 + rng.index(64);
      const BlockCost b = decomposition_cost(c, k, 1 + rng.index(4096));
      if (b.decomposed_params * k * k * k != 3 * k * b.full_params || !(b.param_ratio == expect)) {
        return {false, "k=" + std::to_string(k) + " c=" + std::to_string(c) + " ratio " + b.param_ratio.str()};
      }
      ++checked;
    }
    // Whole-network analysis: every 3D block reports the same ratio.
    NetworkConfig cfg = preset_config("desk");
    cfg.kernel = k;
    cfg.channels_3d = {4 * (2 + rng.index(4)), 0};
    cfg.channels_3d[1] = cfg.channels_3d[0] + 4 * (1 + rng.index(4));
    cfg.bias = false;
    for (const BlockCost& b : analyze(cfg).blocks) {
      if (b.name.find("ddr2d") != std::string::npos) continue;
      if (!(b.param_ratio == expect)) return {false, b.name + " reports " + b.param_ratio.str()};
      ++checked;
    }
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {s < 1.0, std::to_string(checked) + " blocks, ratio 3k/k^3 exact for k=3,5,7 (1/3, 3/25, 3/49)"};
}

Outcome ddr2d_count() {
  const NetworkConfig cfg = preset_config("desk");
  const CostReport r = analyze(cfg);
  Network net(cfg);
  std::size_t enumerated = 0;
  for (const NamedParameter& p : net.params().parameters()) {
    if (p.name.rfind("depth.ddr2d_", 0) == 0) enumerated += p.var->value.size();
  }
  const bool ok = r.ddr2d_params("depth") == 192 && r.ddr2d_params("rgb") == 192 && enumerated == 192;
  return {ok, "depth " + std::to_string(r.ddr2d_params("depth")) + ", rgb " + std::to_string(r.ddr2d_params("rgb")) +
                  ", enumerated " + std::to_string(enumerated)};
}

Outcome counter_equivalence() {
  Rng rng(202);
  int configs = 0;
  for (; configs < 12; ++configs) {
    NetworkConfig cfg;
    cfg.image_height = 3 + rng.index(4);
    cfg.image_width = 3 + rng.index(4);
    cfg.reduction = 1 + rng.index(2);
    const std::size_t r = cfg.reduction;
    cfg.channels_2d = 1 + rng.index(3);
    cfg.channels_3d[0] = r * ((cfg.channels_2d / r) + 1 + rng.index(2));
    cfg.channels_3d[1] = cfg.channels_3d[0] + r * (1 + rng.index(2));
    cfg.aspp_rates = rng.index(2) ? std::vector<std::size_t>{1} : std::vector<std::size_t>{1, 1};
    cfg.aspp_channels = 1 + rng.index(4);
    cfg.head_channels = 1 + rng.index(4);
    cfg.num_classes = 2 + rng.index(3);
    cfg.kernel = rng.index(3) ? 3 : 1;
    cfg.grid = VoxelGridSpec{{0, 0, 0}, 0.5, {12, 12, 12}};
    cfg.modality = static_cast<Modality>(rng.index(3));
    cfg.bias = rng.index(2) == 0;
    cfg.block_bias = rng.index(2) == 0;
    cfg.affine = rng.index(2) == 0;
    cfg.init_seed = rng.index(1000);

    Network net(cfg);
    std::size_t enumerated = 0;
    for (const NamedParameter& p : net.params().parameters()) enumerated += p.var->value.size();
    const CostReport analyzed = analyze(cfg);
    const CostReport counted = count_params(net);
    const CostReport flops = count_flops(net, cfg.image_height, cfg.image_width);

    const double extent = cfg.grid.voxel_size * 12.0;
    const Tensor rgb = random_tensor({3, cfg.image_height, cfg.image_width}, rng, 0.0, 1.0);
    const Tensor depth = random_tensor({cfg.image_height, cfg.image_width}, rng, 0.05 * extent, 0.95 * extent);
    OpCounter counter;
    {
      CountingScope scope(counter);
      net.forward(rgb, depth, facing(cfg));
    }
    if (counted.total_params != enumerated || analyzed.total_params != enumerated ||
        flops.total_flops != counter.flops() || analyzed.total_flops != counter.flops() ||
        analyzed.total_macs != counter.multiplies) {
      return {false, "mismatch on config " + config_to_json(cfg)};
    }
  }
  return {true, std::to_string(configs) + " random configs: params == enumeration, FLOPs == instrumented counter"};
}

Outcome gradients() {
  const auto start = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_target;
  std::size_t min_probes = std::numeric_limits<std::size_t>::max();
  const std::vector<std::string> targets = gradcheck_targets();
  for (const std::string& t : targets) {
    const TargetResult r = run_gradcheck_target(t, 1, {.probes = 50, .step = 1e-5});
    min_probes = std::min(min_probes, r.result.probes);
    if (r.result.max_rel_error >= worst) {
      worst = r.result.max_rel_error;
      worst_target = t;
    }
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream d;
  d << targets.size() << " targets incl. 16^3 network, max rel err " << worst << " (" << worst_target
    << "), min probes " << min_probes;
  return {worst <= 1e-4 && min_probes >= 50 && s <= 600.0, d.str()};
}

Outcome linearity() {
  Rng rng(505);
  double max_err = 0.0;
  for (std::size_t dilation : {1u, 2u}) {
    ParameterStore store;
    DDRBlockConfig cfg;
    cfg.channels = 1;
    cfg.activation = false;
    cfg.dilation = dilation;
    BasicDDR block(store, "b", cfg, rng);
    // Rank-1 kernel K[d,h,w] = a[d] b[h] c[w], loaded as its factors.
    const Tensor a = random_tensor({1, 1, 3, 1, 1}, rng);
    const Tensor b = random_tensor({1, 1, 1, 3, 1}, rng);
    const Tensor c = random_tensor({1, 1, 1, 1, 3}, rng);
    for (const nn::Conv& conv : block.convs()) {
      const Triple& k = conv.spec().kernel;
      conv.weight()->value = k[0] == 3 ? a : k[1] == 3 ? b : c;
    }
    Tensor full({1, 1, 3, 3, 3});
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t l = 0; l < 3; ++l) full.at({0, 0, i, j, l}) = a[i] * b[j] * c[l];
    const ConvSpec spec = ConvSpec::same(3, 1, 1, {3, 3, 3}, dilation, false);
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor x = random_tensor({1, 1, 5, 6, 7}, rng);
      const Tensor y = block.forward(constant(x))->value;
      const Tensor conv = conv3d_forward(x, spec, full, nullptr);
      for (std::size_t i = 0; i < y.size(); ++i) max_err = std::max(max_err, std::abs(y[i] - (x[i] + conv[i])));
    }
  }
  std::ostringstream d;
  d << "triplet vs full k^3 conv on 5 inputs x 2 dilations, max abs err " << max_err;
  return {max_err <= 1e-12, d.str()};
}

ProjectionTable manual_table(std::size_t h, std::size_t w, std::array<std::size_t, 3> dims,
                             std::vector<std::size_t> assignment) {
  ProjectionTable t;
  t.height = h;
  t.width = w;
  t.dims = dims;
  t.pixel_voxel = std::move(assignment);
  return t;
}

Outcome projection_contract() {
  VoxelGridSpec grid;
  grid.dims = {2, 2, 2};
  std::vector<std::string> broken;

  // Collision: two pixels into voxel 5, the larger wins and gets all gradient.
  ProjectionTable t = manual_table(1, 2, grid.dims, {5, 5});
  Tensor v = project_forward(Tensor({1, 1, 2}, std::vector<double>{0.3, 0.7}), t, grid);
  Tensor g3({1, 2, 2, 2}, 0.0);
  g3[5] = 1.0;
  Tensor g2 = project_backward(g3, t);
  if (v[5] != 0.7 || t.winners[5] != 1 || g2[0] != 0.0 || g2[1] != 1.0) broken.push_back("collision max");

  // Tie: equal values, lowest pixel index wins.
  ProjectionTable tie = manual_table(1, 3, grid.dims, {ProjectionTable::kOutside, 2, 2});
  project_forward(Tensor({1, 1, 3}, 0.5), tie, grid);
  if (tie.winners[2] != 1) broken.push_back("tie-break");

  // Winner-only routing and mass conservation on random collisions.
  Rng rng(606);
  VoxelGridSpec g27;
  g27.dims = {3, 3, 3};
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> assign(40);
    for (auto& a : assign) a = rng.index(4) == 0 ? ProjectionTable::kOutside : rng.index(27);
    ProjectionTable r = manual_table(5, 8, g27.dims, assign);
    project_forward(random_tensor({3, 5, 8}, rng), r, g27);
    const Tensor grad3 = random_tensor({3, 3, 3, 3}, rng);
    const Tensor grad2 = project_backward(grad3, r);
    double sourced = 0.0, routed = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      std::vector<double> expect(40, 0.0);
      for (std::size_t vox = 0; vox < 27; ++vox) {
        const std::size_t w = r.winners[ch * 27 + vox];
        if (w == ProjectionTable::kOutside) continue;
        sourced += grad3[ch * 27 + vox];
        expect[w] += grad3[ch * 27 + vox];
      }
      for (std::size_t p = 0; p < 40; ++p) {
        routed += grad2[ch * 40 + p];
        if (grad2[ch * 40 + p] != expect[p]) broken.push_back("winner-only routing");
      }
    }
    if (std::abs(routed - sourced) > 1e-12) broken.push_back("mass conservation");
  }
  if (!broken.empty()) return {false, "broken: " + broken.front()};
  return {true, "collision max, lowest-index tie-break, winner-only routing, gradient mass conserved"};
}

Outcome schedules() {
  const bool weights = empty_weight(0) == 0.05 && empty_weight(50) == 0.1 && empty_weight(100) == 0.2 &&
                       empty_weight(250) == 1.0;
  const bool lr = lr_schedule({1.0, 0.9, 0.8}) == 0.01 && lr_schedule(std::vector<double>(6, 0.5)) == 0.001 &&
                  lr_schedule(std::vector<double>(11, 0.5)) == 0.0001;
  return {weights && lr, "w_empty 0.05/0.1/0.2/1.0 at epochs 0/50/100/250; lr 0.01 -> 0.001 after 5 flat deltas"};
}

Outcome learning_smoke(const fs::path& work) {
  const NetworkConfig cfg = preset_config("desk");
  const fs::path data_dir = work / "smoke_data";
  generate_dataset(data_dir.string(), 4, 2024, gen_config_for(cfg), 0);
  const Dataset data = load_dataset(data_dir.string());
  TrainOptions opt;
  opt.epochs = 300;
  opt.out_dir = (work / "smoke_run").string();
  const auto start = std::chrono::steady_clock::now();
  Trainer trainer(cfg, opt);
  trainer.fit(data);
  const MetricsReport m = evaluate_dataset(trainer.network(), data);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream d;
  d << "desk, 4 scenes, " << trainer.state().epoch << " epochs: SC IoU " << m.sc.iou << ", SSC avg " << m.ssc.average
    << ", final loss " << trainer.state().loss_history.back();
  return {m.sc.iou >= 0.90 && m.ssc.average >= 0.70 && s <= 900.0, d.str()};
}

Outcome directional() {
  const NetworkConfig cfg = preset_config("desk");
  const CostReport light = analyze(cfg);
  const CostReport full_aspp = analyze(cfg, {.aspp = AsppKind::Full});
  const CostReport full_res = analyze(cfg, {.residual = Residual3d::FullBasic});
  const double aspp_ratio = static_cast<double>(light.total_params) / static_cast<double>(full_aspp.total_params);
  const double block_ratio =
      static_cast<double>(full_res.block3d_params()) / static_cast<double>(light.block3d_params());
  std::ostringstream d;
  d << "light/full ASPP params " << light.total_params << "/" << full_aspp.total_params << " = " << aspp_ratio
    << "; full 3^3 residual 3D blocks x" << block_ratio;
  return {aspp_ratio < 0.5 && block_ratio > 2.0, d.str()};
}

Outcome determinism(const fs::path& work) {
  const fs::path data = work / "det_data";
  const std::string cli = DDRNET_CLI;
  auto run = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
  };
  if (run("gen-data --out " + data.string() + " --count 2 --seed 77") != 0) return {false, "gen-data failed"};
  for (const char* dir : {"det_a", "det_b"}) {
    if (run("train --deterministic --data " + data.string() + " --out " + (work / dir).string() + " --epochs 3") != 0) {
      return {false, "train failed"};
    }
  }
  for (const char* file : {"checkpoint.ckpt", "log.tsv", "log.json"}) {
    const std::string a = slurp(work / "det_a" / file);
    if (a.empty() || a != slurp(work / "det_b" / file)) return {false, std::string(file) + " differs"};
  }
  return {true, "two `train --deterministic` runs: checkpoint.ckpt, log.tsv, log.json byte-identical"};
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "ddrnet_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  report("1", decomposition_ratio);
  report("2", ddr2d_count);
  report("3", counter_equivalence);
  report("4", gradients);
  report("5", linearity);
  report("6", projection_contract);
  report("7", schedules);
  report("8", [&] { return learning_smoke(work); });
  report("9", directional);
  std::cout << "criterion 10: n/a  published real-data accuracy, absolute GFLOPs/parameter totals and GPU "
               "timings are not reproducible at desk scale"
            << std::endl;
  report("11", [&] { return determinism(work); });
  return failures == 0 ? 0 : 1;
}
