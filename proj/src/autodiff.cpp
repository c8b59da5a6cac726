/* Copyright 2026 The ExFuse-CPP Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <unordered_set>

#include "exfuse/tensor.hpp"

namespace exfuse {

std::string Shape::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

namespace detail {
namespace {
thread_local bool g_grad_mode = true;
}  // namespace

bool grad_mode_enabled() { return g_grad_mode; }
void set_grad_mode(bool enabled) { g_grad_mode = enabled; }

}  // namespace detail

template <typename T>
void backward(const Tensor<T>& loss, bool retain_graph) {
  using Node = detail::Node<T>;
  if (!loss.defined() || loss.numel() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().str() : std::string("<undefined>")));
  }
  Node* root = loss.node();
  if (root->consumed) throw GraphError("graph already consumed; pass retain_graph to reuse it");
  if (!root->requires_grad) throw GraphError("loss does not depend on any parameter");

  // Iterative post-order DFS yields a topological order (operands first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->consumed) throw GraphError("graph already consumed; pass retain_graph to reuse it");
      if (parent->requires_grad && visited.insert(parent).second) stack.push_back({parent, 0});
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  for (Node* node : order) {
    if (node->backward) node->grad.assign(node->data.size(), T{0});
  }
  root->ensure_grad()[0] += T{1};

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (!node->backward) continue;
    node->backward(*node);
    if (node != root) std::vector<T>().swap(node->grad);
  }

  if (!retain_graph) {
    for (Node* node : order) {
      if (!node->backward) continue;
      node->backward = nullptr;
      node->parents.clear();
      node->consumed = true;
    }
  }
}

template void backward<float>(const Tensor<float>&, bool);
template void backward<double>(const Tensor<double>&, bool);

}  // namespace exfuse
