#pragma once

// Named trainable parameters and the per-forward-pass bridge between them and
// a tape. GraphContext registers each parameter as a leaf exactly once per
// pass (so every consumer shares one node and gradients accumulate), and
// remembers the registration order for the optimizer sweep.

#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace varident {

struct Parameter {
    std::string name;
    Tensor value;
    bool trainable = true;
};

class GraphContext {
public:
    explicit GraphContext(Tape& tape) : tape_(tape) {}

    NodeId param(Parameter& p) {
        auto it = cache_.find(&p);
        if (it != cache_.end()) return it->second;
        Tensor t = p.value;
        t.requires_grad = p.trainable;
        const NodeId id = tape_.leaf(std::move(t));
        cache_.emplace(&p, id);
        order_.emplace_back(&p, id);
        return id;
    }

    // data and fixed noise enter without gradient tracking
    NodeId input(Tensor t) {
        t.requires_grad = false;
        return tape_.leaf(std::move(t));
    }

    NodeId input(const std::vector<double>& v) { return input(Tensor::vector(v)); }

    // leaf id of a parameter if it entered this graph, -1 otherwise
    NodeId node_of(const Parameter& p) const {
        auto it = cache_.find(const_cast<Parameter*>(&p));
        return it == cache_.end() ? -1 : it->second;
    }

    Tape& tape() { return tape_; }
    const Tape& tape() const { return tape_; }

    const std::vector<std::pair<Parameter*, NodeId>>& registered() const { return order_; }

private:
    Tape& tape_;
    std::unordered_map<Parameter*, NodeId> cache_;
    std::vector<std::pair<Parameter*, NodeId>> order_;
};

} // namespace varident
