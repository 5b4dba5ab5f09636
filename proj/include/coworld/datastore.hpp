#pragma once

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include <json.hpp>

#include "coworld/env.hpp"
#include "coworld/rng.hpp"

namespace coworld {

// One finished episode: T steps, T+1 frames. discounts hold the raw 0/1
// continuation flag (never pre-multiplied by gamma).
struct Episode {
  int T = 0;
  int H = 0, W = 0, C = 0;
  int A = 0;
  std::vector<uint8_t> observations;  // [T+1, H*W*C]
  std::vector<float> actions;         // [T, A]
  std::vector<float> rewards;         // [T]
  std::vector<float> discounts;       // [T]
  uint64_t episode_seed = 0;          // replays the episode through Env::reset_with_seed

  void validate() const;  // throws DataError
  size_t frame_size() const { return static_cast<size_t>(H) * W * C; }
};

void save_episode(const Episode& ep, const std::string& path);
Episode load_episode(const std::string& path);

struct SequenceBatch {
  int B = 0, L = 0;
  int obs_dim = 0, A = 0;
  std::vector<uint8_t> observations;  // [B, L, obs_dim], row-major by (b, l)
  std::vector<float> actions;         // [B, L, A]
  std::vector<float> rewards;         // [B, L]
  std::vector<float> discounts;       // [B, L]
  std::vector<uint8_t> is_first;      // [B, L]; true exactly at episode starts
};

enum class BufferMode { online, offline };

// Episode store with step-count capacity. Online buffers evict their oldest
// episode when over capacity; offline buffers reject appends entirely.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(BufferMode mode, int64_t capacity_steps = 200000);

  void append(Episode ep);
  BufferMode mode() const { return mode_; }
  int64_t total_steps() const { return total_steps_; }
  size_t episode_count() const { return episodes_.size(); }
  const Episode& episode(size_t i) const { return episodes_[i]; }

  // B contiguous slices of length L, uniform over (episode, start) pairs;
  // episodes shorter than L never appear.
  SequenceBatch sample_sequences(int B, int L, Rng& rng) const;

  void save_dir(const std::string& dir, const nlohmann::json& manifest_extra) const;
  static ReplayBuffer load_dir(const std::string& dir, BufferMode mode);
  static nlohmann::json read_manifest(const std::string& dir);

 private:
  void push_episode(Episode ep);  // shared by append and load_dir

  BufferMode mode_;
  int64_t capacity_;
  int64_t total_steps_ = 0;
  std::deque<Episode> episodes_;
};

}  // namespace coworld
