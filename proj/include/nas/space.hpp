#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nas/bigint.hpp"
#include "nas/common.hpp"
#include "nas/rng.hpp"

namespace nas::space {

using nlohmann::json;

enum class Activation { linear, relu, tanh, sigmoid, softmax };
const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Tensor shape as seen by the graph compiler: either a flat feature vector
// (seq == false, len == width) or a 1-D sequence of `len` steps with `ch`
// channels.
struct Shape {
    bool seq = false;
    long len = 0;
    long ch = 1;
    long flat() const { return seq ? len * ch : len; }
    bool operator==(const Shape&) const = default;
    std::string str() const;
    static Shape features(long width) { return {false, width, 1}; }
    static Shape sequence(long length, long channels) { return {true, length, channels}; }
};

struct NodePath {
    int cell = -1, block = -1, node = -1;
    std::string str() const;  // "c0.b1.n2"
    static NodePath parse(const std::string& s);
    auto operator<=>(const NodePath&) const = default;
};

// A reference to a tensor produced elsewhere in the structure: a named input,
// a previous cell's output, a specific node's output, or all inputs at once.
struct TensorRef {
    enum class Kind { input, cell_output, node_output, all_inputs };
    Kind kind = Kind::input;
    std::string input;  // kind == input
    int cell = -1;      // kind == cell_output
    NodePath node;      // kind == node_output

    static TensorRef in(std::string name);
    static TensorRef cell_out(int idx);
    static TensorRef node_out(NodePath p);
    static TensorRef inputs_all();
    std::string str() const;
    static TensorRef parse(const std::string& s);
    bool operator==(const TensorRef&) const = default;
};

struct LayerOp {
    enum class Kind { identity, dense, dropout, conv1d, maxpool1d, activation, add, concat, connect };
    Kind kind = Kind::identity;
    int units = 0;                          // dense
    Activation act = Activation::linear;    // dense / activation
    double rate = 0.0;                      // dropout
    int filters = 0, kernel = 0, stride = 1;  // conv1d
    int pool = 0;                           // maxpool1d
    std::vector<TensorRef> targets;         // connect; empty targets = no skip

    static LayerOp Identity();
    static LayerOp Dense(int units, Activation act = Activation::linear);
    static LayerOp Dropout(double rate);
    static LayerOp Conv1D(int filters, int kernel, int stride = 1);
    static LayerOp MaxPool1D(int pool);
    static LayerOp Act(Activation a);
    static LayerOp Add();
    static LayerOp Concat();
    static LayerOp Connect(std::vector<TensorRef> targets);

    bool null_connect() const { return kind == Kind::connect && targets.empty(); }
    bool parametric() const { return kind == Kind::dense || kind == Kind::conv1d; }
    std::string describe() const;
    bool operator==(const LayerOp&) const = default;

    json to_json() const;
    static LayerOp from_json(const json& j);
};

struct NodeSpec {
    enum class Kind { variable, constant, mirror };
    Kind kind = Kind::variable;
    std::vector<LayerOp> choices;  // variable
    LayerOp op;                    // constant
    NodePath ref;                  // mirror

    static NodeSpec Variable(std::vector<LayerOp> choices);
    static NodeSpec Constant(LayerOp op);
    static NodeSpec Mirror(NodePath ref);
};

// Edge inside a block. `from` is a node index, or -1-k for the block's k-th
// declared input. `to` is always a node index.
struct BlockEdge {
    int from = 0;
    int to = 0;
};

struct BlockSpec {
    std::vector<TensorRef> inputs;
    std::vector<NodeSpec> nodes;
    std::vector<BlockEdge> edges;  // empty = feed-forward chain from input 0

    static BlockSpec chain(TensorRef input, std::vector<NodeSpec> nodes);
};

enum class MergeRule { concatenate, add };

struct CellSpec {
    std::vector<BlockSpec> blocks;
    MergeRule output_rule = MergeRule::concatenate;
};

struct HeadSpec {
    int units = 1;
    Activation act = Activation::linear;
};

struct SpaceSpec {
    struct Input {
        std::string name;
        Shape shape;
    };
    std::string name;  // label, used in logs
    std::vector<Input> inputs;
    std::vector<CellSpec> cells;
    std::vector<int> output_cells;  // empty = last cell only
    MergeRule output_rule = MergeRule::concatenate;
    HeadSpec head;

    json to_json() const;
    static SpaceSpec from_json(const json& j);
};

struct DecisionSlot {
    NodePath path;
    int arity = 0;
};

using Encoding = std::vector<int>;

// Decoded architecture. Nodes are in topological order ("in" indices always
// point backwards); the first nodes are the structure inputs, the last is the
// output head. Identity choices and empty Connects never appear.
struct ArchNode {
    enum class Role { input, op, head };
    Role role = Role::op;
    std::string id;
    LayerOp op;             // valid for op/head roles
    std::string input_name;  // input role
    Shape input_shape;       // input role
    std::string share_tag;   // parametric ops; equal tags share one weight block
    std::vector<int> in;
};

struct ArchGraph {
    std::string space_name;
    std::vector<ArchNode> nodes;
    Encoding decisions;
    // graph node index created for each decision slot, -1 when the choice
    // collapsed (Identity or empty Connect)
    std::vector<int> slot_nodes;

    int head_index() const { return static_cast<int>(nodes.size()) - 1; }
    json to_json() const;
    static ArchGraph from_json(const json& j);
};

class SearchSpace {
public:
    static SearchSpace build(SpaceSpec spec);

    const SpaceSpec& spec() const { return spec_; }
    const std::vector<DecisionSlot>& slots() const { return slots_; }
    std::vector<int> arities() const;
    const BigUint& size() const { return size_; }

    Encoding sample_random(Rng& rng) const;
    Encoding sample_random(uint64_t seed) const;
    void validate_encoding(const Encoding& enc) const;
    ArchGraph decode(const Encoding& enc) const;

    // Variable node choice list for a slot (round-trip and tooling).
    const std::vector<LayerOp>& slot_choices(int slot) const;

private:
    SearchSpace() = default;
    SpaceSpec spec_;
    std::vector<DecisionSlot> slots_;
    BigUint size_{1};
};

// Built-in spaces: combo_small, combo_large, uno_small, uno_large, nt3_small,
// plus combo_mini, a desk-scale variant of combo_small for end-to-end runs.
SpaceSpec builtin_space(const std::string& name);
std::vector<std::string> builtin_space_names();

// Reference networks with fixed layer stacks: combo, uno, nt3.
ArchGraph builtin_baseline(const std::string& name);

// Baseline-shaped dense network over arbitrary input widths; used as the
// comparison model for generated datasets. `dims` follows the combo layout:
// one feature width per input group, the 2nd and 3rd sharing one submodel.
ArchGraph combo_reference_graph(const std::vector<long>& dims, int width);

// Load a SpaceSpec either from a builtin name or a JSON file path.
SpaceSpec resolve_space(const std::string& name_or_path);

}  // namespace nas::space
