#pragma once
// Fill-reducing orderings for the scalar global operator: recursive
// graph-bisection nested dissection with a greedy minimum-degree fallback
// (used on leaf blocks and whenever a bisection degenerates).

#include "common.hpp"

namespace heterodyn {

struct OrderingResult {
  // order[k] = original vertex eliminated k-th.
  std::vector<int> order;
  bool used_fallback = false;
};

// adjacency[v] lists the distinct neighbors of v (no self-loops required).
OrderingResult nested_dissection_order(const std::vector<std::vector<int>>& adjacency);

// Greedy minimum-degree with clique fill updates, over an induced subgraph.
std::vector<int> min_degree_order(const std::vector<std::vector<int>>& adjacency,
                                  const std::vector<int>& block);

}  // namespace heterodyn
