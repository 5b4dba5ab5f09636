#include "coworld/datastore.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "coworld/container.hpp"
#include "coworld/errors.hpp"

namespace fs = std::filesystem;

namespace coworld {

namespace {
constexpr char kEpisodeMagic[9] = "CWEP0001";
}

void Episode::validate() const {
  if (T < 1) throw DataError("episode.T: must be >= 1");
  if (H < 1 || W < 1 || C < 1) throw DataError("episode frame dims: must be positive");
  if (A < 1) throw DataError("episode.A: must be >= 1");
  if (observations.size() != static_cast<size_t>(T + 1) * frame_size())
    throw DataError("episode.observations: length mismatch");
  if (actions.size() != static_cast<size_t>(T) * A)
    throw DataError("episode.actions: length mismatch");
  if (rewards.size() != static_cast<size_t>(T)) throw DataError("episode.rewards: length mismatch");
  if (discounts.size() != static_cast<size_t>(T))
    throw DataError("episode.discounts: length mismatch");
  for (float d : discounts)
    if (d != 0.0f && d != 1.0f) throw DataError("episode.discounts: entries must be 0 or 1");
  for (int t = 0; t + 1 < T; ++t)
    if (discounts[t] == 0.0f) throw DataError("episode.discounts: zero before the final step");
  for (float r : rewards)
    if (!std::isfinite(r)) throw DataError("episode.rewards: non-finite entry");
}

void save_episode(const Episode& ep, const std::string& path) {
  ep.validate();
  nlohmann::json meta{{"kind", "episode"},
                      {"T", ep.T},
                      {"H", ep.H},
                      {"W", ep.W},
                      {"C", ep.C},
                      {"A", ep.A},
                      {"episode_seed", ep.episode_seed}};
  std::vector<ArrayView> arrays = {
      {"observations", "u8", {ep.T + 1, ep.H, ep.W, ep.C}, ep.observations.data(),
       ep.observations.size()},
      {"actions", "f32", {ep.T, ep.A}, ep.actions.data(), ep.actions.size() * 4},
      {"rewards", "f32", {ep.T}, ep.rewards.data(), ep.rewards.size() * 4},
      {"discounts", "f32", {ep.T}, ep.discounts.data(), ep.discounts.size() * 4},
  };
  write_container(path, kEpisodeMagic, meta, arrays);
}

Episode load_episode(const std::string& path) {
  Container c = read_container(path, kEpisodeMagic);
  Episode ep;
  try {
    ep.T = c.meta.at("T").get<int>();
    ep.H = c.meta.at("H").get<int>();
    ep.W = c.meta.at("W").get<int>();
    ep.C = c.meta.at("C").get<int>();
    ep.A = c.meta.at("A").get<int>();
    ep.episode_seed = c.meta.at("episode_seed").get<uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("episode meta: ") + ex.what());
  }
  ep.observations = c.find("observations").as_u8();
  ep.actions = c.find("actions").as_f32();
  ep.rewards = c.find("rewards").as_f32();
  ep.discounts = c.find("discounts").as_f32();
  try {
    ep.validate();
  } catch (const DataError& ex) {
    throw FormatError(std::string("episode payload: ") + ex.what());
  }
  return ep;
}

ReplayBuffer::ReplayBuffer(BufferMode mode, int64_t capacity_steps)
    : mode_(mode), capacity_(capacity_steps) {
  if (capacity_ < 1) throw ConfigError("buffer_capacity: must be >= 1");
}

void ReplayBuffer::push_episode(Episode ep) {
  ep.validate();
  total_steps_ += ep.T;
  episodes_.push_back(std::move(ep));
  while (total_steps_ > capacity_ && episodes_.size() > 1) {
    total_steps_ -= episodes_.front().T;
    episodes_.pop_front();
  }
}

void ReplayBuffer::append(Episode ep) {
  if (mode_ == BufferMode::offline)
    throw DataError("replay buffer: offline dataset is immutable; append rejected");
  push_episode(std::move(ep));
}

SequenceBatch ReplayBuffer::sample_sequences(int B, int L, Rng& rng) const {
  if (B < 1 || L < 1) throw UsageError("sample_sequences: B and L must be >= 1");
  // snapshot of eligible (episode, start-count) pairs
  std::vector<size_t> eligible;
  std::vector<int64_t> cumulative;  // cumulative start counts
  int64_t total = 0;
  for (size_t i = 0; i < episodes_.size(); ++i) {
    if (episodes_[i].T >= L) {
      eligible.push_back(i);
      total += episodes_[i].T - L + 1;
      cumulative.push_back(total);
    }
  }
  if (total == 0)
    throw DataError("sample_sequences: no stored episode is at least " + std::to_string(L) +
                    " steps long");

  SequenceBatch batch;
  batch.B = B;
  batch.L = L;
  const Episode& first = episodes_[eligible[0]];
  batch.obs_dim = static_cast<int>(first.frame_size());
  batch.A = first.A;
  batch.observations.resize(static_cast<size_t>(B) * L * batch.obs_dim);
  batch.actions.resize(static_cast<size_t>(B) * L * batch.A);
  batch.rewards.resize(static_cast<size_t>(B) * L);
  batch.discounts.resize(static_cast<size_t>(B) * L);
  batch.is_first.assign(static_cast<size_t>(B) * L, 0);

  for (int b = 0; b < B; ++b) {
    const int64_t pick = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(total)));
    size_t lo = 0;
    while (cumulative[lo] <= pick) ++lo;
    const Episode& ep = episodes_[eligible[lo]];
    const int64_t before = lo == 0 ? 0 : cumulative[lo - 1];
    const int start = static_cast<int>(pick - before);
    for (int l = 0; l < L; ++l) {
      const int t = start + l;
      const size_t row = static_cast<size_t>(b) * L + l;
      std::copy_n(ep.observations.begin() + static_cast<size_t>(t) * batch.obs_dim,
                  batch.obs_dim, batch.observations.begin() + row * batch.obs_dim);
      std::copy_n(ep.actions.begin() + static_cast<size_t>(t) * batch.A, batch.A,
                  batch.actions.begin() + row * batch.A);
      batch.rewards[row] = ep.rewards[t];
      batch.discounts[row] = ep.discounts[t];
      batch.is_first[row] = t == 0 ? 1 : 0;
    }
  }
  return batch;
}

void ReplayBuffer::save_dir(const std::string& dir, const nlohmann::json& manifest_extra) const {
  fs::create_directories(dir);
  nlohmann::json manifest = manifest_extra;
  manifest["schema"] = 1;
  manifest["kind"] = "dataset";
  manifest["episode_count"] = episodes_.size();
  manifest["total_steps"] = total_steps_;
  nlohmann::json files = nlohmann::json::array();
  nlohmann::json seeds = nlohmann::json::array();
  char name[32];
  for (size_t i = 0; i < episodes_.size(); ++i) {
    std::snprintf(name, sizeof(name), "ep_%06zu.cwep", i);
    save_episode(episodes_[i], (fs::path(dir) / name).string());
    files.push_back(name);
    seeds.push_back(episodes_[i].episode_seed);
  }
  manifest["episodes"] = files;
  manifest["episode_seeds"] = seeds;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << "\n";
  if (!out) throw FormatError("dataset manifest: write failed in " + dir);
}

nlohmann::json ReplayBuffer::read_manifest(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "manifest.json");
  if (!in) throw FormatError("dataset manifest: missing in " + dir);
  nlohmann::json manifest = nlohmann::json::parse(in, nullptr, false);
  if (manifest.is_discarded()) throw FormatError("dataset manifest: invalid JSON in " + dir);
  return manifest;
}

ReplayBuffer ReplayBuffer::load_dir(const std::string& dir, BufferMode mode) {
  nlohmann::json manifest = read_manifest(dir);
  if (!manifest.contains("episodes") || !manifest["episodes"].is_array())
    throw FormatError("dataset manifest: missing 'episodes' list");
  ReplayBuffer buf(mode, manifest.value("capacity", int64_t{1} << 40));
  for (const auto& f : manifest["episodes"])
    buf.push_episode(load_episode((fs::path(dir) / f.get<std::string>()).string()));
  return buf;
}

}  // namespace coworld
