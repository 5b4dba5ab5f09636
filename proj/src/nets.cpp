#include "coworld/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "coworld/container.hpp"
#include "coworld/errors.hpp"
#include "coworld/kernels.hpp"

namespace coworld {

void Linear::init(Rng& rng, double gain) {
  const double limit = std::sqrt(6.0 / (W.value.rows + W.value.cols)) * gain;
  for (auto& v : W.value.data) v = rng.uniform(-limit, limit);
  std::fill(b.value.data.begin(), b.value.data.end(), 0.0);
}

MLP::MLP(const std::string& name, int in, const std::vector<int>& hidden, int out) {
  int prev = in;
  for (size_t i = 0; i < hidden.size(); ++i) {
    layers.emplace_back(name + ".h" + std::to_string(i), prev, hidden[i]);
    prev = hidden[i];
  }
  layers.emplace_back(name + ".out", prev, out);
}

void MLP::init(Rng& rng, double out_gain) {
  for (size_t i = 0; i + 1 < layers.size(); ++i) layers[i].init(rng);
  layers.back().init(rng, out_gain);
}

TRef MLP::apply(Tape& t, TRef x) const {
  TRef h = x;
  for (size_t i = 0; i + 1 < layers.size(); ++i) h = t.elu_(layers[i].apply(t, h));
  return layers.back().apply(t, h);
}

void MLP::collect(std::vector<Param*>& out) {
  for (auto& l : layers) l.collect(out);
}

GRUCell::GRUCell(const std::string& name, int input, int units_)
    : gates(name + ".gates", input + units_, 2 * units_),
      cand(name + ".cand", input + units_, units_),
      units(units_) {}

void GRUCell::init(Rng& rng) {
  gates.init(rng);
  cand.init(rng);
}

TRef GRUCell::apply(Tape& t, TRef x, TRef h) const {
  TRef g = t.sigmoid_(gates.apply(t, t.concat_cols(x, h)));
  TRef r = t.slice_cols(g, 0, units);
  TRef u = t.slice_cols(g, units, 2 * units);
  TRef c = t.tanh_(cand.apply(t, t.concat_cols(x, t.mul(r, h))));
  // h' = u*h + (1-u)*c
  return t.add(t.mul(u, h), t.sub(c, t.mul(u, c)));
}

void GRUCell::collect(std::vector<Param*>& out) {
  gates.collect(out);
  cand.collect(out);
}

double Adam::grad_norm(const std::vector<Param*>& params) const {
  double total = 0.0;
  for (const Param* p : params) {
    std::vector<double> sq(p->grad.size());
    kern::zip_elems(p->grad.data.data(), p->grad.data.data(), sq.data(), sq.size(),
                    [](double a, double b) { return a * b; });
    total += kern::reduce_sum(sq.data(), sq.size());
  }
  return std::sqrt(total);
}

double Adam::step(const std::vector<Param*>& params) {
  const double norm = grad_norm(params);
  const double scale = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;
  ++steps;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (Param* p : params) {
    for (size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad.data[i] * scale;
      p->m.data[i] = beta1 * p->m.data[i] + (1.0 - beta1) * g;
      p->v.data[i] = beta2 * p->v.data[i] + (1.0 - beta2) * g * g;
      const double mhat = p->m.data[i] / bc1;
      const double vhat = p->v.data[i] / bc2;
      p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p->zero_grad();
  }
  return norm;
}

uint64_t param_fingerprint(const std::vector<Param*>& params) {
  uint64_t h = 1469598103934665603ull;
  for (const Param* p : params) {
    for (double d : p->value.data) {
      uint64_t bits;
      static_assert(sizeof(bits) == sizeof(d));
      __builtin_memcpy(&bits, &d, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffull;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

void copy_params(const std::vector<Param*>& src, const std::vector<Param*>& dst) {
  if (src.size() != dst.size()) throw std::logic_error("copy_params: size mismatch");
  for (size_t i = 0; i < src.size(); ++i) {
    if (src[i]->value.size() != dst[i]->value.size())
      throw std::logic_error("copy_params: shape mismatch at " + src[i]->name);
    dst[i]->value.data = src[i]->value.data;
  }
}

namespace {
constexpr char kCheckpointMagic[9] = "CWCK0001";
}

void save_param_file(const std::string& path, const std::vector<Param*>& params,
                     const nlohmann::json& meta) {
  std::vector<ArrayView> arrays;
  arrays.reserve(params.size());
  for (const Param* p : params)
    arrays.push_back({p->name,
                      "f64",
                      {p->value.rows, p->value.cols},
                      p->value.data.data(),
                      p->value.size() * sizeof(double)});
  write_container(path, kCheckpointMagic, meta, arrays);
}

nlohmann::json load_param_file(const std::string& path, const std::vector<Param*>& params) {
  Container c = read_container(path, kCheckpointMagic);
  if (c.arrays.size() != params.size())
    throw FormatError("checkpoint arrays: expected " + std::to_string(params.size()) +
                      " parameters, file has " + std::to_string(c.arrays.size()));
  for (Param* p : params) {
    const LoadedArray& a = c.find(p->name);
    if (a.shape.size() != 2 || a.shape[0] != p->value.rows || a.shape[1] != p->value.cols)
      throw FormatError("checkpoint array " + p->name + ": shape mismatch");
    p->value.data = a.as_f64();
  }
  return c.meta;
}

nlohmann::json load_param_file_meta(const std::string& path) {
  return read_container(path, kCheckpointMagic).meta;
}

}  // namespace coworld
