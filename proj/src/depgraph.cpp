#include "escgcn/depgraph.hpp"

#include <algorithm>
#include <deque>
#include <sstream>
#include <stdexcept>

#include "escgcn/tensor.hpp"

namespace escgcn {

DepTree::DepTree(std::vector<int> heads) : n(static_cast<int>(heads.size())),
                                           head(std::move(heads)) {
  if (n == 0) throw DataError("empty dependency tree");
  children.assign(n + 1, {});
  root = 0;
  for (int v = 1; v <= n; ++v) {
    const int h = head[v - 1];
    if (h < 0 || h > n)
      throw DataError("token " + std::to_string(v) + " has head " +
                      std::to_string(h) + " outside 0.." + std::to_string(n));
    if (h == 0) {
      if (root != 0)
        throw DataError("multiple roots: tokens " + std::to_string(root) +
                        " and " + std::to_string(v));
      root = v;
    } else {
      children[h].push_back(v);
    }
  }
  if (root == 0) throw DataError("no root token (head 0) present");

  depth.assign(n + 1, -1);
  std::deque<int> queue{root};
  depth[root] = 0;
  int seen = 0;
  while (!queue.empty()) {
    const int v = queue.front();
    queue.pop_front();
    ++seen;
    for (int c : children[v]) {
      depth[c] = depth[v] + 1;
      queue.push_back(c);
    }
  }
  if (seen != n) {
    // name one token on a cycle for the error message
    for (int v = 1; v <= n; ++v)
      if (depth[v] < 0)
        throw DataError("head indices contain a cycle involving token " +
                        std::to_string(v));
  }
}

namespace {

int lca_pair(const DepTree& t, int u, int v) {
  while (u != v) {
    if (t.depth[u] >= t.depth[v])
      u = t.parent(u);
    else
      v = t.parent(v);
  }
  return u;
}

}  // namespace

int lca(const DepTree& tree, const std::vector<Span>& spans) {
  if (spans.empty()) throw DataError("lca of no spans");
  int acc = 0;
  for (const Span& s : spans) {
    if (s.first < 1 || s.last > tree.n || s.first > s.last)
      throw DataError("span out of range");
    for (int v = s.first; v <= s.last; ++v)
      acc = acc == 0 ? v : lca_pair(tree, acc, v);
  }
  return acc;
}

std::vector<char> sdp_nodes(const DepTree& tree, const Span& a, const Span& b) {
  std::vector<char> on_path(tree.n + 1, 0);
  for (int u = a.first; u <= a.last; ++u)
    for (int v = b.first; v <= b.last; ++v) {
      const int w = lca_pair(tree, u, v);
      for (int x = u;; x = tree.parent(x)) {
        on_path[x] = 1;
        if (x == w) break;
      }
      for (int x = v;; x = tree.parent(x)) {
        on_path[x] = 1;
        if (x == w) break;
      }
    }
  return on_path;
}

PrunedGraph prune(const DepTree& tree, const std::vector<Span>& spans, int k) {
  if (k < 0 && k != kFullTree)
    throw ConfigError("pruning distance must be >= 0 or FULL");
  if (spans.size() < 2) throw DataError("pruning needs at least two spans");

  PrunedGraph pg;
  pg.k = k;
  pg.kept.assign(tree.n + 1, 0);

  if (k == kFullTree) {
    std::fill(pg.kept.begin() + 1, pg.kept.end(), 1);
  } else {
    // Seed = union of dependency paths over all span pairs.
    std::vector<char> seed(tree.n + 1, 0);
    for (size_t i = 0; i < spans.size(); ++i)
      for (size_t j = i + 1; j < spans.size(); ++j) {
        auto path = sdp_nodes(tree, spans[i], spans[j]);
        for (int v = 1; v <= tree.n; ++v) seed[v] |= path[v];
      }
    // BFS ball of radius k over undirected tree edges.
    std::vector<int> dist(tree.n + 1, -1);
    std::deque<int> queue;
    for (int v = 1; v <= tree.n; ++v)
      if (seed[v]) {
        dist[v] = 0;
        queue.push_back(v);
      }
    while (!queue.empty()) {
      const int v = queue.front();
      queue.pop_front();
      if (dist[v] == k) continue;
      std::vector<int> nbrs = tree.children[v];
      if (tree.parent(v) != 0) nbrs.push_back(tree.parent(v));
      for (int u : nbrs)
        if (dist[u] < 0) {
          dist[u] = dist[v] + 1;
          queue.push_back(u);
        }
    }
    for (int v = 1; v <= tree.n; ++v) pg.kept[v] = dist[v] >= 0;
  }

  for (int v = 1; v <= tree.n; ++v) {
    const int h = tree.parent(v);
    if (h != 0 && pg.kept[v] && pg.kept[h]) pg.kept_edges.emplace_back(h, v);
  }
  return pg;
}

NormAdjacency adjacency(const PrunedGraph& pg, int n) {
  NormAdjacency adj;
  adj.n = n;
  adj.a_tilde.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    adj.a_tilde[static_cast<size_t>(i) * n + i] = 1.0;  // self-loops
  for (const auto& [h, d] : pg.kept_edges) {
    adj.a_tilde[static_cast<size_t>(h - 1) * n + (d - 1)] = 1.0;
    adj.a_tilde[static_cast<size_t>(d - 1) * n + (h - 1)] = 1.0;
  }
  adj.degree.assign(n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      adj.degree[i] += adj.a_tilde[static_cast<size_t>(i) * n + j];
  return adj;
}

std::string dump_graph(const PrunedGraph& pg, const NormAdjacency& adj) {
  std::ostringstream os;
  os << "k=" << (pg.k == kFullTree ? std::string("FULL")
                                   : std::to_string(pg.k))
     << "\nkept_nodes=";
  bool first = true;
  for (int v = 1; v < static_cast<int>(pg.kept.size()); ++v)
    if (pg.kept[v]) {
      os << (first ? "" : ",") << v;
      first = false;
    }
  os << "\nedges=";
  for (size_t i = 0; i < pg.kept_edges.size(); ++i)
    os << (i ? " " : "") << pg.kept_edges[i].first << "-"
       << pg.kept_edges[i].second;
  os << "\nA_tilde=\n";
  for (int i = 1; i <= adj.n; ++i) {
    for (int j = 1; j <= adj.n; ++j)
      os << (j > 1 ? " " : "") << static_cast<int>(adj.at(i, j));
    os << "\n";
  }
  return os.str();
}

}  // namespace escgcn
