#include "nas/space.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace nas::space {

const char* to_string(Activation a) {
    switch (a) {
        case Activation::linear: return "linear";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::softmax: return "softmax";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "linear") return Activation::linear;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "softmax") return Activation::softmax;
    throw ConfigError("unknown activation: " + s);
}

std::string Shape::str() const {
    if (seq) return "(" + std::to_string(len) + "," + std::to_string(ch) + ")";
    return std::to_string(len);
}

std::string NodePath::str() const {
    return "c" + std::to_string(cell) + ".b" + std::to_string(block) + ".n" + std::to_string(node);
}

NodePath NodePath::parse(const std::string& s) {
    NodePath p;
    if (std::sscanf(s.c_str(), "c%d.b%d.n%d", &p.cell, &p.block, &p.node) != 3)
        throw ConfigError("bad node path: " + s);
    return p;
}

TensorRef TensorRef::in(std::string name) {
    TensorRef r;
    r.kind = Kind::input;
    r.input = std::move(name);
    return r;
}
TensorRef TensorRef::cell_out(int idx) {
    TensorRef r;
    r.kind = Kind::cell_output;
    r.cell = idx;
    return r;
}
TensorRef TensorRef::node_out(NodePath p) {
    TensorRef r;
    r.kind = Kind::node_output;
    r.node = p;
    return r;
}
TensorRef TensorRef::inputs_all() {
    TensorRef r;
    r.kind = Kind::all_inputs;
    return r;
}

std::string TensorRef::str() const {
    switch (kind) {
        case Kind::input: return "input:" + input;
        case Kind::cell_output: return "cell:" + std::to_string(cell);
        case Kind::node_output: return "node:" + node.str();
        case Kind::all_inputs: return "inputs";
    }
    return "?";
}

TensorRef TensorRef::parse(const std::string& s) {
    if (s == "inputs") return inputs_all();
    if (s.rfind("input:", 0) == 0) return in(s.substr(6));
    if (s.rfind("cell:", 0) == 0) return cell_out(std::stoi(s.substr(5)));
    if (s.rfind("node:", 0) == 0) return node_out(NodePath::parse(s.substr(5)));
    throw ConfigError("bad tensor ref: " + s);
}

LayerOp LayerOp::Identity() { return LayerOp{}; }
LayerOp LayerOp::Dense(int units, Activation act) {
    LayerOp o;
    o.kind = Kind::dense;
    o.units = units;
    o.act = act;
    return o;
}
LayerOp LayerOp::Dropout(double rate) {
    LayerOp o;
    o.kind = Kind::dropout;
    o.rate = rate;
    return o;
}
LayerOp LayerOp::Conv1D(int filters, int kernel, int stride) {
    LayerOp o;
    o.kind = Kind::conv1d;
    o.filters = filters;
    o.kernel = kernel;
    o.stride = stride;
    return o;
}
LayerOp LayerOp::MaxPool1D(int pool) {
    LayerOp o;
    o.kind = Kind::maxpool1d;
    o.pool = pool;
    return o;
}
LayerOp LayerOp::Act(Activation a) {
    LayerOp o;
    o.kind = Kind::activation;
    o.act = a;
    return o;
}
LayerOp LayerOp::Add() {
    LayerOp o;
    o.kind = Kind::add;
    return o;
}
LayerOp LayerOp::Concat() {
    LayerOp o;
    o.kind = Kind::concat;
    return o;
}
LayerOp LayerOp::Connect(std::vector<TensorRef> targets) {
    LayerOp o;
    o.kind = Kind::connect;
    o.targets = std::move(targets);
    return o;
}

std::string LayerOp::describe() const {
    std::ostringstream os;
    switch (kind) {
        case Kind::identity: os << "Identity"; break;
        case Kind::dense: os << "Dense(" << units << "," << to_string(act) << ")"; break;
        case Kind::dropout: os << "Dropout(" << rate << ")"; break;
        case Kind::conv1d: os << "Conv1D(" << filters << ",k" << kernel << ",s" << stride << ")"; break;
        case Kind::maxpool1d: os << "MaxPooling1D(" << pool << ")"; break;
        case Kind::activation: os << "Activation(" << to_string(act) << ")"; break;
        case Kind::add: os << "Add"; break;
        case Kind::concat: os << "Concatenate"; break;
        case Kind::connect:
            os << "Connect(";
            if (targets.empty()) os << "null";
            for (size_t i = 0; i < targets.size(); ++i) os << (i ? "&" : "") << targets[i].str();
            os << ")";
            break;
    }
    return os.str();
}

NodeSpec NodeSpec::Variable(std::vector<LayerOp> choices) {
    NodeSpec n;
    n.kind = Kind::variable;
    n.choices = std::move(choices);
    return n;
}
NodeSpec NodeSpec::Constant(LayerOp op) {
    NodeSpec n;
    n.kind = Kind::constant;
    n.op = std::move(op);
    return n;
}
NodeSpec NodeSpec::Mirror(NodePath ref) {
    NodeSpec n;
    n.kind = Kind::mirror;
    n.ref = ref;
    return n;
}

BlockSpec BlockSpec::chain(TensorRef input, std::vector<NodeSpec> nodes) {
    BlockSpec b;
    b.inputs = {std::move(input)};
    b.nodes = std::move(nodes);
    return b;
}

namespace {

// Effective edges of a block: the declared list, or the default feed-forward
// chain input0 -> n0 -> n1 -> ... when none are declared.
std::vector<BlockEdge> block_edges(const BlockSpec& b) {
    if (!b.edges.empty()) return b.edges;
    std::vector<BlockEdge> edges;
    for (int i = 0; i < static_cast<int>(b.nodes.size()); ++i)
        edges.push_back({i == 0 ? -1 : i - 1, i});
    return edges;
}

// Topological order of block nodes; throws on cycles.
std::vector<int> block_topo_order(const BlockSpec& b, const std::string& where) {
    int n = static_cast<int>(b.nodes.size());
    std::vector<std::vector<int>> succ(n);
    std::vector<int> indeg(n, 0);
    for (const auto& e : block_edges(b)) {
        if (e.to < 0 || e.to >= n) throw SpaceError("edge target out of range", where);
        if (e.from >= n) throw SpaceError("edge source out of range", where);
        if (e.from >= 0) {
            succ[e.from].push_back(e.to);
            indeg[e.to]++;
        } else {
            int k = -1 - e.from;
            if (k >= static_cast<int>(b.inputs.size()))
                throw SpaceError("edge references missing block input", where);
        }
    }
    std::vector<int> order;
    std::vector<int> ready;
    for (int i = 0; i < n; ++i)
        if (indeg[i] == 0) ready.push_back(i);
    while (!ready.empty()) {
        int v = ready.front();
        ready.erase(ready.begin());
        order.push_back(v);
        for (int s : succ[v])
            if (--indeg[s] == 0) ready.push_back(s);
    }
    if (static_cast<int>(order.size()) != n) throw SpaceError("cyclic block graph", where);
    return order;
}

int block_sink(const BlockSpec& b, const std::string& where) {
    int n = static_cast<int>(b.nodes.size());
    std::vector<bool> has_out(n, false);
    for (const auto& e : block_edges(b))
        if (e.from >= 0) has_out[e.from] = true;
    int sink = -1;
    for (int i = 0; i < n; ++i) {
        if (!has_out[i]) {
            if (sink >= 0) throw SpaceError("block has more than one output node", where);
            sink = i;
        }
    }
    if (sink < 0) throw SpaceError("block has no output node", where);
    return sink;
}

void validate_op(const LayerOp& op, const std::string& where) {
    switch (op.kind) {
        case LayerOp::Kind::dense:
            if (op.units < 1) throw SpaceError("dense units must be >= 1", where);
            break;
        case LayerOp::Kind::dropout:
            if (!(op.rate > 0.0 && op.rate < 1.0))
                throw SpaceError("dropout rate must be in (0,1)", where);
            break;
        case LayerOp::Kind::conv1d:
            if (op.filters < 1 || op.kernel < 1 || op.stride < 1)
                throw SpaceError("conv1d sizes must be >= 1", where);
            break;
        case LayerOp::Kind::maxpool1d:
            if (op.pool < 1) throw SpaceError("pooling size must be >= 1", where);
            break;
        default: break;
    }
}

}  // namespace

SearchSpace SearchSpace::build(SpaceSpec spec) {
    if (spec.inputs.empty()) throw SpaceError("space has no inputs", "");
    if (spec.cells.empty()) throw SpaceError("space has no cells", "");

    std::set<std::string> input_names;
    for (const auto& in : spec.inputs) {
        if (!input_names.insert(in.name).second)
            throw SpaceError("duplicate input name '" + in.name + "'", "");
        if (in.shape.flat() < 1) throw SpaceError("input '" + in.name + "' has empty shape", "");
    }

    // Traversal-ordered set of node paths seen so far; mirrors and connect
    // targets may only point backwards into it.
    std::set<NodePath> seen;
    std::set<NodePath> variables;

    auto check_ref = [&](const TensorRef& r, int current_cell, const std::string& where) {
        switch (r.kind) {
            case TensorRef::Kind::input:
                if (!input_names.count(r.input))
                    throw SpaceError("unresolvable input '" + r.input + "'", where);
                break;
            case TensorRef::Kind::cell_output:
                if (r.cell < 0 || r.cell >= current_cell)
                    throw SpaceError("unresolvable cell output " + std::to_string(r.cell), where);
                break;
            case TensorRef::Kind::node_output:
                if (!seen.count(r.node))
                    throw SpaceError("unresolvable node ref " + r.node.str(), where);
                break;
            case TensorRef::Kind::all_inputs: break;
        }
    };

    std::vector<DecisionSlot> slots;

    for (int ci = 0; ci < static_cast<int>(spec.cells.size()); ++ci) {
        const CellSpec& cell = spec.cells[ci];
        if (cell.blocks.empty()) throw SpaceError("cell has no blocks", "c" + std::to_string(ci));
        for (int bi = 0; bi < static_cast<int>(cell.blocks.size()); ++bi) {
            const BlockSpec& block = cell.blocks[bi];
            std::string bwhere = "c" + std::to_string(ci) + ".b" + std::to_string(bi);
            if (block.inputs.empty()) throw SpaceError("block has no inputs", bwhere);
            if (block.nodes.empty()) throw SpaceError("block has no nodes", bwhere);
            for (const auto& r : block.inputs) check_ref(r, ci, bwhere);

            auto order = block_topo_order(block, bwhere);
            (void)block_sink(block, bwhere);

            // reachability from block inputs
            {
                int n = static_cast<int>(block.nodes.size());
                std::vector<bool> reach(n, false);
                for (int pass = 0; pass < n; ++pass) {
                    for (const auto& e : block_edges(block)) {
                        if (e.from < 0)
                            reach[e.to] = true;
                        else if (reach[e.from])
                            reach[e.to] = true;
                    }
                }
                for (int i = 0; i < n; ++i)
                    if (!reach[i])
                        throw SpaceError("node unreachable from block inputs",
                                         NodePath{ci, bi, i}.str());
            }

            for (int ni = 0; ni < static_cast<int>(block.nodes.size()); ++ni) {
                const NodeSpec& node = block.nodes[ni];
                NodePath path{ci, bi, ni};
                switch (node.kind) {
                    case NodeSpec::Kind::variable: {
                        if (node.choices.empty())
                            throw SpaceError("variable node with no choices", path.str());
                        bool any_connect = false, any_layer = false;
                        for (const auto& ch : node.choices) {
                            validate_op(ch, path.str());
                            if (ch.kind == LayerOp::Kind::connect) {
                                any_connect = true;
                                for (const auto& t : ch.targets) check_ref(t, ci, path.str());
                            } else {
                                any_layer = true;
                            }
                        }
                        if (any_connect && any_layer)
                            throw SpaceError("connect choices cannot mix with layer choices",
                                             path.str());
                        if (any_connect && block.nodes.size() != 1)
                            throw SpaceError("connect node must be the only node in its block",
                                             path.str());
                        slots.push_back({path, static_cast<int>(node.choices.size())});
                        variables.insert(path);
                        break;
                    }
                    case NodeSpec::Kind::constant:
                        validate_op(node.op, path.str());
                        if (node.op.kind == LayerOp::Kind::connect)
                            throw SpaceError("constant connect nodes are not supported", path.str());
                        break;
                    case NodeSpec::Kind::mirror:
                        if (!seen.count(node.ref)) {
                            if (node.ref.cell > ci || (node.ref.cell == ci && node.ref.block >= bi))
                                throw SpaceError("forward mirror " + node.ref.str(), path.str());
                            throw SpaceError("dangling mirror referent " + node.ref.str(),
                                             path.str());
                        }
                        if (!variables.count(node.ref))
                            throw SpaceError("mirror referent is not a variable node", path.str());
                        break;
                }
                seen.insert(path);
            }
        }
    }

    for (int oc : spec.output_cells)
        if (oc < 0 || oc >= static_cast<int>(spec.cells.size()))
            throw SpaceError("output cell index out of range", std::to_string(oc));
    if (spec.head.units < 1) throw SpaceError("head units must be >= 1", "head");

    SearchSpace s;
    s.spec_ = std::move(spec);
    s.slots_ = std::move(slots);
    s.size_ = BigUint(1);
    for (const auto& slot : s.slots_) s.size_ *= static_cast<uint64_t>(slot.arity);
    return s;
}

std::vector<int> SearchSpace::arities() const {
    std::vector<int> a;
    a.reserve(slots_.size());
    for (const auto& s : slots_) a.push_back(s.arity);
    return a;
}

Encoding SearchSpace::sample_random(Rng& rng) const {
    Encoding e(slots_.size());
    for (size_t i = 0; i < slots_.size(); ++i) e[i] = rng.uniform_int(slots_[i].arity);
    return e;
}

Encoding SearchSpace::sample_random(uint64_t seed) const {
    Rng rng(seed);
    return sample_random(rng);
}

void SearchSpace::validate_encoding(const Encoding& enc) const {
    if (enc.size() != slots_.size())
        throw Error("encoding length " + std::to_string(enc.size()) + " != " +
                    std::to_string(slots_.size()) + " decision slots");
    for (size_t i = 0; i < enc.size(); ++i)
        if (enc[i] < 0 || enc[i] >= slots_[i].arity)
            throw Error("choice index " + std::to_string(enc[i]) + " out of range at slot " +
                        std::to_string(i));
}

const std::vector<LayerOp>& SearchSpace::slot_choices(int slot) const {
    const NodePath& p = slots_.at(slot).path;
    return spec_.cells[p.cell].blocks[p.block].nodes[p.node].choices;
}

namespace {

// Decode-time value of a spec node: the graph node holding its output, or the
// tensors it forwards when the node collapsed (identity / connect).
struct Resolved {
    LayerOp op;
    std::vector<int> tensors;  // graph node indices this node's output stands for
};

}  // namespace

ArchGraph SearchSpace::decode(const Encoding& enc) const {
    validate_encoding(enc);

    ArchGraph g;
    g.space_name = spec_.name;
    g.decisions = enc;
    g.slot_nodes.assign(slots_.size(), -1);

    std::map<std::string, int> input_idx;
    for (const auto& in : spec_.inputs) {
        ArchNode n;
        n.role = ArchNode::Role::input;
        n.id = "input:" + in.name;
        n.input_name = in.name;
        n.input_shape = in.shape;
        input_idx[in.name] = static_cast<int>(g.nodes.size());
        g.nodes.push_back(std::move(n));
    }

    auto add_node = [&](std::string id, LayerOp op, std::vector<int> in,
                        std::string share = "") -> int {
        ArchNode n;
        n.role = ArchNode::Role::op;
        n.id = std::move(id);
        n.op = std::move(op);
        n.in = std::move(in);
        n.share_tag = std::move(share);
        g.nodes.push_back(std::move(n));
        return static_cast<int>(g.nodes.size()) - 1;
    };

    // Collapses a tensor list to one graph node, inserting a merge when needed.
    auto merge_tensors = [&](std::vector<int> ts, MergeRule rule, const std::string& id) -> int {
        if (ts.empty()) throw Error("nothing to merge at " + id);
        if (ts.size() == 1) return ts[0];
        LayerOp op = rule == MergeRule::concatenate ? LayerOp::Concat() : LayerOp::Add();
        return add_node(id, std::move(op), std::move(ts));
    };

    std::vector<int> cell_out(spec_.cells.size(), -1);
    std::map<NodePath, Resolved> resolved;

    auto resolve_ref = [&](const TensorRef& r) -> std::vector<int> {
        switch (r.kind) {
            case TensorRef::Kind::input: return {input_idx.at(r.input)};
            case TensorRef::Kind::cell_output: return {cell_out[r.cell]};
            case TensorRef::Kind::node_output: return resolved.at(r.node).tensors;
            case TensorRef::Kind::all_inputs: {
                std::vector<int> all;
                for (const auto& in : spec_.inputs) all.push_back(input_idx.at(in.name));
                return all;
            }
        }
        return {};
    };

    std::map<NodePath, int> slot_of;
    for (size_t j = 0; j < slots_.size(); ++j) slot_of[slots_[j].path] = static_cast<int>(j);

    for (int ci = 0; ci < static_cast<int>(spec_.cells.size()); ++ci) {
        const CellSpec& cell = spec_.cells[ci];
        std::vector<int> contributions;
        for (int bi = 0; bi < static_cast<int>(cell.blocks.size()); ++bi) {
            const BlockSpec& block = cell.blocks[bi];
            std::string bwhere = "c" + std::to_string(ci) + ".b" + std::to_string(bi);

            // tensor lists feeding each node
            std::vector<std::vector<int>> feeds(block.nodes.size());
            auto edges = block_edges(block);
            auto order = block_topo_order(block, bwhere);
            int sink = block_sink(block, bwhere);

            auto input_tensors = [&](int k) { return resolve_ref(block.inputs[k]); };

            for (int ni : order) {
                NodePath path{ci, bi, ni};
                // gather inputs in edge-declaration order
                std::vector<int> ins;
                for (const auto& e : edges) {
                    if (e.to != ni) continue;
                    if (e.from < 0) {
                        auto ts = input_tensors(-1 - e.from);
                        ins.insert(ins.end(), ts.begin(), ts.end());
                    } else {
                        const auto& ts = resolved.at(NodePath{ci, bi, e.from}).tensors;
                        ins.insert(ins.end(), ts.begin(), ts.end());
                    }
                }

                const NodeSpec& node = block.nodes[ni];
                LayerOp op;
                std::string share;
                switch (node.kind) {
                    case NodeSpec::Kind::variable:
                        op = node.choices[enc[slot_of.at(path)]];
                        if (op.parametric()) share = path.str();
                        break;
                    case NodeSpec::Kind::constant:
                        op = node.op;
                        if (op.parametric()) share = path.str();
                        break;
                    case NodeSpec::Kind::mirror: {
                        const Resolved& ref = resolved.at(node.ref);
                        op = ref.op;
                        if (op.parametric()) share = node.ref.str();
                        break;
                    }
                }

                Resolved res;
                res.op = op;
                switch (op.kind) {
                    case LayerOp::Kind::identity:
                        res.tensors = ins;  // pass-through
                        break;
                    case LayerOp::Kind::connect: {
                        for (const auto& t : op.targets) {
                            auto ts = resolve_ref(t);
                            res.tensors.insert(res.tensors.end(), ts.begin(), ts.end());
                        }
                        break;  // empty targets = empty tensor list
                    }
                    case LayerOp::Kind::add:
                    case LayerOp::Kind::concat: {
                        if (ins.empty()) throw Error("merge node without inputs at " + path.str());
                        res.tensors = {add_node(path.str(), op, ins, share)};
                        break;
                    }
                    default: {
                        if (ins.empty()) throw Error("node without inputs at " + path.str());
                        int src = merge_tensors(ins, MergeRule::concatenate, path.str() + ".in");
                        res.tensors = {add_node(path.str(), op, {src}, share)};
                        break;
                    }
                }
                if (node.kind == NodeSpec::Kind::variable) {
                    bool materialized = op.kind != LayerOp::Kind::identity &&
                                        op.kind != LayerOp::Kind::connect;
                    g.slot_nodes[slot_of.at(path)] = materialized ? res.tensors[0] : -1;
                }
                resolved[path] = std::move(res);
            }
            const auto& out = resolved.at(NodePath{ci, bi, sink}).tensors;
            contributions.insert(contributions.end(), out.begin(), out.end());
        }
        // de-duplicate while preserving order: a skip may target a tensor that
        // already feeds the merge
        std::vector<int> uniq;
        for (int t : contributions)
            if (std::find(uniq.begin(), uniq.end(), t) == uniq.end()) uniq.push_back(t);
        if (uniq.empty()) throw Error("cell c" + std::to_string(ci) + " produced no output");
        cell_out[ci] = merge_tensors(uniq, cell.output_rule, "c" + std::to_string(ci) + ".out");
    }

    std::vector<int> outs;
    if (spec_.output_cells.empty()) {
        outs.push_back(cell_out.back());
    } else {
        // aliased outputs merge once, same as in the cell rule
        for (int oc : spec_.output_cells)
            if (std::find(outs.begin(), outs.end(), cell_out[oc]) == outs.end())
                outs.push_back(cell_out[oc]);
    }
    int body = merge_tensors(outs, spec_.output_rule, "structure.out");

    ArchNode head;
    head.role = ArchNode::Role::head;
    head.id = "head";
    head.op = LayerOp::Dense(spec_.head.units, spec_.head.act);
    head.share_tag = "head";
    head.in = {body};
    g.nodes.push_back(std::move(head));
    return g;
}

}  // namespace nas::space
