#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "coworld/rng.hpp"
#include "coworld/tape.hpp"

namespace coworld {

struct Linear {
  Param W, b;

  Linear() = default;
  Linear(std::string name, int in, int out)
      : W(name + ".W", in, out), b(name + ".b", 1, out) {}

  // Glorot-uniform weights scaled by gain; gain 0 zero-initializes (used for
  // the actor's output layer so initial policies are centered).
  void init(Rng& rng, double gain = 1.0);

  TRef apply(Tape& t, TRef x) const {
    return t.add_rowvec(t.matmul(x, t.param(const_cast<Param&>(W))),
                        t.param(const_cast<Param&>(b)));
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&W);
    out.push_back(&b);
  }
};

// Fully connected stack with ELU between layers and a linear output.
struct MLP {
  std::vector<Linear> layers;

  MLP() = default;
  MLP(const std::string& name, int in, const std::vector<int>& hidden, int out);

  void init(Rng& rng, double out_gain = 1.0);
  TRef apply(Tape& t, TRef x) const;
  void collect(std::vector<Param*>& out);
};

struct GRUCell {
  Linear gates;  // [x, h] -> (reset, update)
  Linear cand;   // [x, r*h] -> candidate
  int units = 0;

  GRUCell() = default;
  GRUCell(const std::string& name, int input, int units_);

  void init(Rng& rng);
  TRef apply(Tape& t, TRef x, TRef h) const;
  void collect(std::vector<Param*>& out);
};

// Adam with global-gradient-norm clipping. Clears grads after stepping.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip = 100.0;
  int64_t steps = 0;

  explicit Adam(double lr_ = 1e-3, double clip_ = 100.0) : lr(lr_), clip(clip_) {}

  double grad_norm(const std::vector<Param*>& params) const;
  // returns the pre-clip global gradient norm (a standard training metric)
  double step(const std::vector<Param*>& params);
};

// FNV-1a over all parameter bytes in collection order; used by the trainer's
// stage-isolation asserts ("this update touched only its own params").
uint64_t param_fingerprint(const std::vector<Param*>& params);

void copy_params(const std::vector<Param*>& src, const std::vector<Param*>& dst);

// Checkpoint files: every param value as a named f64 array in the shared
// binary container (magic "CWCK0001"), meta carried alongside. Loading
// matches arrays to params by name and checks shapes; a missing or extra
// array is a format error.
void save_param_file(const std::string& path, const std::vector<Param*>& params,
                     const nlohmann::json& meta);
nlohmann::json load_param_file(const std::string& path, const std::vector<Param*>& params);
nlohmann::json load_param_file_meta(const std::string& path);  // meta only, params untouched

}  // namespace coworld
