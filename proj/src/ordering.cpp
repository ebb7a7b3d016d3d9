#include "ordering.hpp"

#include <algorithm>
#include <numeric>
#include <set>

namespace heterodyn {

std::vector<int> min_degree_order(const std::vector<std::vector<int>>& adjacency,
                                  const std::vector<int>& block) {
  const int n = static_cast<int>(block.size());
  std::vector<int> local(adjacency.size(), -1);
  for (int i = 0; i < n; ++i) local[block[i]] = i;

  // Induced subgraph with mutable neighbor sets so elimination can add fill.
  std::vector<std::set<int>> nbr(n);
  for (int i = 0; i < n; ++i)
    for (int g : adjacency[block[i]])
      if (local[g] >= 0) nbr[i].insert(local[g]);

  std::vector<char> eliminated(n, 0);
  std::vector<int> order;
  order.reserve(n);
  for (int step = 0; step < n; ++step) {
    int best = -1;
    size_t best_deg = SIZE_MAX;
    for (int i = 0; i < n; ++i) {
      if (!eliminated[i] && nbr[i].size() < best_deg) {
        best_deg = nbr[i].size();
        best = i;
      }
    }
    eliminated[best] = 1;
    order.push_back(block[best]);
    // Connect the eliminated vertex's neighbors into a clique.
    std::vector<int> live;
    for (int j : nbr[best])
      if (!eliminated[j]) live.push_back(j);
    for (int j : live) {
      nbr[j].erase(best);
      for (int k : live)
        if (k != j) nbr[j].insert(k);
    }
    nbr[best].clear();
  }
  return order;
}

namespace {

constexpr int kLeafSize = 48;

// BFS level structure from a root, restricted to `in_block`.
std::vector<int> bfs_levels(const std::vector<std::vector<int>>& adj,
                            const std::vector<char>& in_block, int root, int n,
                            std::vector<int>& frontier_buf) {
  std::vector<int> level(n, -1);
  frontier_buf.clear();
  frontier_buf.push_back(root);
  level[root] = 0;
  for (size_t head = 0; head < frontier_buf.size(); ++head) {
    const int v = frontier_buf[head];
    for (int w : adj[v]) {
      if (in_block[w] && level[w] < 0) {
        level[w] = level[v] + 1;
        frontier_buf.push_back(w);
      }
    }
  }
  return level;
}

void dissect(const std::vector<std::vector<int>>& adj, std::vector<int> block,
             std::vector<int>& out, bool& used_fallback) {
  const int n_all = static_cast<int>(adj.size());
  if (static_cast<int>(block.size()) <= kLeafSize) {
    auto leaf = min_degree_order(adj, block);
    out.insert(out.end(), leaf.begin(), leaf.end());
    return;
  }
  std::vector<char> in_block(n_all, 0);
  for (int v : block) in_block[v] = 1;

  // Split off one connected component at a time.
  std::vector<int> frontier;
  auto level = bfs_levels(adj, in_block, block.front(), n_all, frontier);
  std::vector<int> component = frontier;
  if (component.size() < block.size()) {
    std::vector<int> rest;
    std::vector<char> in_comp(n_all, 0);
    for (int v : component) in_comp[v] = 1;
    for (int v : block)
      if (!in_comp[v]) rest.push_back(v);
    dissect(adj, std::move(component), out, used_fallback);
    dissect(adj, std::move(rest), out, used_fallback);
    return;
  }

  // Pseudo-peripheral root: two BFS sweeps from an arbitrary start.
  int root = block.front();
  for (int sweep = 0; sweep < 2; ++sweep) {
    level = bfs_levels(adj, in_block, root, n_all, frontier);
    root = frontier.back();
  }
  level = bfs_levels(adj, in_block, root, n_all, frontier);
  int max_level = 0;
  for (int v : block) max_level = std::max(max_level, level[v]);
  if (max_level < 2) {
    // Too shallow to bisect; fall back to minimum degree on the whole block.
    used_fallback = true;
    auto md = min_degree_order(adj, block);
    out.insert(out.end(), md.begin(), md.end());
    return;
  }
  // Median level becomes the vertex separator.
  std::vector<int> level_count(max_level + 1, 0);
  for (int v : block) ++level_count[level[v]];
  int split = 0, cum = 0;
  const int half = static_cast<int>(block.size()) / 2;
  while (split < max_level && cum + level_count[split] < half) cum += level_count[split++];
  if (split == 0) split = 1;
  if (split == max_level) split = max_level - 1;

  std::vector<int> left, right, sep;
  for (int v : block) {
    if (level[v] < split)
      left.push_back(v);
    else if (level[v] > split)
      right.push_back(v);
    else
      sep.push_back(v);
  }
  if (left.empty() || right.empty()) {
    used_fallback = true;
    auto md = min_degree_order(adj, block);
    out.insert(out.end(), md.begin(), md.end());
    return;
  }
  dissect(adj, std::move(left), out, used_fallback);
  dissect(adj, std::move(right), out, used_fallback);
  // Separator eliminated last, minimum-degree within itself.
  auto sep_order = min_degree_order(adj, sep);
  out.insert(out.end(), sep_order.begin(), sep_order.end());
}

}  // namespace

OrderingResult nested_dissection_order(const std::vector<std::vector<int>>& adjacency) {
  OrderingResult result;
  const int n = static_cast<int>(adjacency.size());
  result.order.reserve(n);
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  dissect(adjacency, std::move(all), result.order, result.used_fallback);
  return result;
}

}  // namespace heterodyn
