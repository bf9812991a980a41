#include "ddrnet/nn/instrument.hpp"

namespace ddrnet::nn {

namespace {
thread_local OpCounter* g_counter = nullptr;
thread_local KinkRecorder* g_recorder = nullptr;
}  // namespace

OpCounter* active_counter() { return g_counter; }

CountingScope::CountingScope(OpCounter& counter) : previous_(g_counter) { g_counter = &counter; }
CountingScope::~CountingScope() { g_counter = previous_; }

void KinkRecorder::record_bits(std::span<const std::uint8_t> bits) {
  std::uint64_t word = 0;
  std::size_t n = 0;
  for (std::uint8_t b : bits) {
    word = (word << 1) | (b & 1u);
    if (++n == 64) {
      record(word);
      word = 0;
      n = 0;
    }
  }
  record(word ^ (static_cast<std::uint64_t>(n) << 56));
}

KinkRecorder* active_recorder() { return g_recorder; }

RecordingScope::RecordingScope(KinkRecorder& recorder) : previous_(g_recorder) {
  g_recorder = &recorder;
}
RecordingScope::~RecordingScope() { g_recorder = previous_; }

}  // namespace ddrnet::nn
