#pragma once

#include <cstdint>
#include <span>

namespace ddrnet::nn {

// Literal operation tally filled by the reference kernels while a
// CountingScope is alive. Used to cross-check the analytic cost model.
struct OpCounter {
  std::uint64_t multiplies = 0;
  std::uint64_t adds = 0;
  // Pooling / relu / elementwise add / concat / projection writes: one per output element.
  std::uint64_t elementwise = 0;

  std::uint64_t flops() const { return multiplies + adds + elementwise; }
};

OpCounter* active_counter();

class CountingScope {
 public:
  explicit CountingScope(OpCounter& counter);
  ~CountingScope();
  CountingScope(const CountingScope&) = delete;
  CountingScope& operator=(const CountingScope&) = delete;

 private:
  OpCounter* previous_;
};

// Hash of every discrete branch decision (relu masks, pooling winners,
// projection winners) taken during a forward pass. Two forwards with the
// same signature lie on the same smooth piece of the network function.
class KinkRecorder {
 public:
  void record(std::uint64_t value) {
    hash_ ^= value + 0x9e3779b97f4a7c15ULL + (hash_ << 6) + (hash_ >> 2);
  }
  void record_bits(std::span<const std::uint8_t> bits);
  std::uint64_t signature() const { return hash_; }

 private:
  std::uint64_t hash_ = 1469598103934665603ULL;
};

KinkRecorder* active_recorder();

class RecordingScope {
 public:
  explicit RecordingScope(KinkRecorder& recorder);
  ~RecordingScope();
  RecordingScope(const RecordingScope&) = delete;
  RecordingScope& operator=(const RecordingScope&) = delete;

 private:
  KinkRecorder* previous_;
};

}  // namespace ddrnet::nn
