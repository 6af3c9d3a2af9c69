#pragma once

#include <memory>
#include <vector>

#include "kardam/cost.hpp"
#include "kardam/simulation.hpp"

namespace testutil {

inline std::shared_ptr<const kardam::CostFunction> bowl(std::size_t d, double curvature = 1.0) {
  return std::make_shared<const kardam::CostFunction>(
      kardam::QuadraticBowl{kardam::Vector(d, 0.0), kardam::Vector(d, curvature)});
}

inline std::vector<kardam::WorkerSpec> workers(int honest, const std::vector<kardam::Behavior>& byz = {},
                                               std::size_t batch = 16) {
  std::vector<kardam::WorkerSpec> out;
  int id = 0;
  for (int i = 0; i < honest; ++i) out.push_back({id++, kardam::Behavior{}, batch});
  for (const auto& b : byz) out.push_back({id++, b, batch});
  return out;
}

inline kardam::Behavior flood_of(kardam::Behavior::Kind payload, double rate, double scale = 0.0) {
  kardam::Behavior b;
  b.kind = kardam::Behavior::Kind::kFlood;
  b.payload = payload;
  b.rate = rate;
  b.scale = scale;
  return b;
}

inline kardam::Behavior behavior(kardam::Behavior::Kind kind, double scale = 0.0) {
  kardam::Behavior b;
  b.kind = kind;
  b.scale = scale;
  return b;
}

}  // namespace testutil
