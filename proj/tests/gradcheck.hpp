#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "geoembed/network.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Result {
  double worst = 0.0;
  std::string where;
};

// Compares backward() against central differences of L = <w, f(x)> for every
// parameter entry and every input entry.
inline Result check_network(geoembed::Network& net, geoembed::Tensor x, std::uint64_t seed,
                            geoembed::Mode mode = geoembed::Mode::Train, double h = 1e-5) {
  geoembed::Rng rng(seed);
  const geoembed::Tensor probe = net.forward(x, mode);
  const geoembed::Tensor w = oracle::random_tensor(probe.shape(), rng);
  auto loss = [&] { return geoembed::dot(w, net.forward(x, mode)); };

  net.zero_grad();
  net.forward(x, mode);
  const geoembed::Tensor grad_x = net.backward(w);
  std::vector<std::vector<double>> analytic;
  for (auto& p : net.parameters()) analytic.emplace_back(p.grad.begin(), p.grad.end());

  Result r;
  auto record = [&](double a, double n, const std::string& where) {
    // Absolute floor keeps entries whose true gradient is ~0 from dominating.
    const double e = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
    if (e > r.worst) {
      r.worst = e;
      r.where = where;
    }
  };
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].value.size(); ++j) {
      const double num = oracle::central_difference(loss, params[i].value[j], h);
      record(analytic[i][j], num, params[i].name + "[" + std::to_string(j) + "]");
    }
  }
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double num = oracle::central_difference(loss, x[j], h);
    record(grad_x[j], num, "input[" + std::to_string(j) + "]");
  }
  return r;
}

}  // namespace gradcheck
