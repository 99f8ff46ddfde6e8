#pragma once

#include <string>
#include <utility>
#include <vector>

namespace escgcn {

/// Inclusive token span, 1-based.
struct Span {
  int first = 0;
  int last = 0;
  bool contains(int i) const { return first <= i && i <= last; }
  int width() const { return last - first + 1; }
};

/// Rooted dependency tree over tokens 1..n. head[i-1] is the parent of token
/// i (0 for the root). Construction validates single-rootedness and acyclicity.
struct DepTree {
  int n = 0;
  std::vector<int> head;                    // 1-based parents, 0 = root
  std::vector<std::vector<int>> children;   // children[v] for v in 1..n
  int root = 0;
  std::vector<int> depth;                   // depth[root] = 0

  DepTree() = default;
  explicit DepTree(std::vector<int> heads);

  int parent(int v) const { return head[v - 1]; }
};

/// Sentinel for "no pruning": keep the whole tree.
inline constexpr int kFullTree = -1;

struct PrunedGraph {
  std::vector<std::pair<int, int>> kept_edges;  // (head, dependent), 1-based
  std::vector<char> kept;                       // kept[v] for v in 1..n; [0] unused
  int k = kFullTree;

  bool is_kept(int v) const { return kept[v] != 0; }
  std::vector<char> kept_mask0() const {  // 0-based mask of length n
    return std::vector<char>(kept.begin() + 1, kept.end());
  }
};

/// Adjacency with reverse edges, self-loops and degrees (A~ = A + I).
struct NormAdjacency {
  int n = 0;
  std::vector<double> a_tilde;  // n*n row-major
  std::vector<double> degree;   // d_i = row sum of A~

  double at(int i, int j) const {  // 1-based
    return a_tilde[static_cast<size_t>(i - 1) * n + (j - 1)];
  }
};

/// Deepest node that is an (inclusive) ancestor of every token in every span.
int lca(const DepTree& tree, const std::vector<Span>& spans);

/// Union over token pairs (u in a, v in b) of the unique tree path u..v.
std::vector<char> sdp_nodes(const DepTree& tree, const Span& a, const Span& b);

/// Path-centric pruning: keep nodes within undirected tree distance k of the
/// dependency-path node set (union over all span pairs); k = kFullTree keeps
/// everything. Kept edges are tree edges with both endpoints kept.
PrunedGraph prune(const DepTree& tree, const std::vector<Span>& spans, int k);

NormAdjacency adjacency(const PrunedGraph& pg, int n);

/// Plain-text dump of the pruned edge list and A~ (golden-file format).
std::string dump_graph(const PrunedGraph& pg, const NormAdjacency& adj);

}  // namespace escgcn
