#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mbrec/ndcore/array.hpp"
#include "mbrec/ndcore/random.hpp"
#include "mbrec/ndcore/tape.hpp"

namespace support {

using mbrec::Array;
using mbrec::real;

inline Array random_array(mbrec::Shape shape, mbrec::Rng& rng, double lo = -1, double hi = 1) {
  Array a(std::move(shape));
  for (real& x : a.data()) x = static_cast<real>(rng.uniform(lo, hi));
  return a;
}

// Builds a scalar objective from variables on a fresh tape.
using Builder = std::function<mbrec::Var(mbrec::Tape&, const std::vector<mbrec::Var>&)>;

struct OpCheck {
  double relative_error = 0;  // norm-wise, worst over inputs
};

// Analytic gradient of each input against five-point central differences.
inline OpCheck check_gradients(std::vector<Array> inputs, const Builder& f, double h = 1e-5) {
  auto eval = [&]() {
    mbrec::Tape t;
    std::vector<mbrec::Var> vars;
    for (const auto& a : inputs) vars.push_back(t.variable(a));
    return static_cast<double>(t.value(f(t, vars)).item());
  };
  mbrec::Tape t;
  std::vector<mbrec::Var> vars;
  for (const auto& a : inputs) vars.push_back(t.variable(a));
  t.backward(f(t, vars));
  OpCheck out;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Array g = t.grad(vars[i]);
    double dd = 0, aa = 0, nn = 0;
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const real saved = inputs[i][k];
      auto at = [&](double off) {
        inputs[i][k] = static_cast<real>(saved + off);
        return eval();
      };
      const double num = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
      inputs[i][k] = saved;
      dd += (g[k] - num) * (g[k] - num);
      aa += g[k] * g[k];
      nn += num * num;
    }
    const double scale = std::max(std::sqrt(aa), std::sqrt(nn));
    const double rel = std::sqrt(dd) <= 1e-10 || scale == 0 ? 0 : std::sqrt(dd) / scale;
    out.relative_error = std::max(out.relative_error, rel);
  }
  return out;
}

// Scratch directory removed at scope exit.
class TempDir {
 public:
  TempDir() {
    char tmpl[] = "/tmp/mbrec_test_XXXXXX";
    path_ = mkdtemp(tmpl);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace support
