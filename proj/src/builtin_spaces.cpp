#include "nas/space.hpp"

namespace nas::space {

namespace {

using K = LayerOp::Kind;

// The 13-option MLP menu shared by the combo and uno spaces.
std::vector<LayerOp> mlp_choices() {
    return {
        LayerOp::Identity(),
        LayerOp::Dense(100, Activation::relu),
        LayerOp::Dense(100, Activation::tanh),
        LayerOp::Dense(100, Activation::sigmoid),
        LayerOp::Dropout(0.05),
        LayerOp::Dense(500, Activation::relu),
        LayerOp::Dense(500, Activation::tanh),
        LayerOp::Dense(500, Activation::sigmoid),
        LayerOp::Dropout(0.1),
        LayerOp::Dense(1000, Activation::relu),
        LayerOp::Dense(1000, Activation::tanh),
        LayerOp::Dense(1000, Activation::sigmoid),
        LayerOp::Dropout(0.2),
    };
}

// Desk-scale MLP menu used by combo_mini.
std::vector<LayerOp> mini_mlp_choices() {
    return {
        LayerOp::Identity(),
        LayerOp::Dense(16, Activation::relu),
        LayerOp::Dense(16, Activation::tanh),
        LayerOp::Dense(32, Activation::relu),
        LayerOp::Dense(32, Activation::tanh),
        LayerOp::Dense(64, Activation::relu),
        LayerOp::Dense(64, Activation::tanh),
        LayerOp::Dropout(0.1),
    };
}

NodeSpec mlp_node() { return NodeSpec::Variable(mlp_choices()); }

std::vector<NodeSpec> mlp_nodes(int n) {
    std::vector<NodeSpec> v;
    for (int i = 0; i < n; ++i) v.push_back(mlp_node());
    return v;
}

// The 9 skip-connection options of the combo spaces.
std::vector<LayerOp> combo_connect_choices() {
    auto cell = TensorRef::in("cell");
    auto d1 = TensorRef::in("drug1");
    auto d2 = TensorRef::in("drug2");
    return {
        LayerOp::Connect({}),                       // null
        LayerOp::Connect({cell}),
        LayerOp::Connect({d1}),
        LayerOp::Connect({d2}),
        LayerOp::Connect({TensorRef::cell_out(0)}),  // first cell's output
        LayerOp::Connect({TensorRef::inputs_all()}),
        LayerOp::Connect({cell, d1}),
        LayerOp::Connect({cell, d2}),
        LayerOp::Connect({d1, d2}),
    };
}

SpaceSpec combo_like(const std::string& name, long cell_dim, long drug_dim,
                     std::vector<LayerOp> menu, int replicated_cells) {
    SpaceSpec s;
    s.name = name;
    s.inputs = {{"cell", Shape::features(cell_dim)},
                {"drug1", Shape::features(drug_dim)},
                {"drug2", Shape::features(drug_dim)}};

    auto var3 = [&] {
        std::vector<NodeSpec> v;
        for (int i = 0; i < 3; ++i) v.push_back(NodeSpec::Variable(menu));
        return v;
    };

    // C0: per-input feature encoders; the drug2 block mirrors drug1's.
    CellSpec c0;
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("cell"), var3()));
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("drug1"), var3()));
    c0.blocks.push_back(BlockSpec::chain(
        TensorRef::in("drug2"), {NodeSpec::Mirror({0, 1, 0}), NodeSpec::Mirror({0, 1, 1}),
                                 NodeSpec::Mirror({0, 1, 2})}));
    s.cells.push_back(std::move(c0));

    // middle cells: an MLP block plus a skip-connection block
    for (int i = 1; i <= replicated_cells; ++i) {
        CellSpec c;
        c.blocks.push_back(BlockSpec::chain(TensorRef::cell_out(i - 1), var3()));
        auto connect = combo_connect_choices();
        for (int p = 1; p < i; ++p)
            connect.push_back(LayerOp::Connect({TensorRef::cell_out(p)}));
        c.blocks.push_back(BlockSpec::chain(TensorRef::cell_out(i - 1),
                                            {NodeSpec::Variable(std::move(connect))}));
        s.cells.push_back(std::move(c));
    }

    // final MLP cell
    CellSpec last;
    last.blocks.push_back(
        BlockSpec::chain(TensorRef::cell_out(replicated_cells), var3()));
    s.cells.push_back(std::move(last));

    for (int i = 0; i < static_cast<int>(s.cells.size()); ++i) s.output_cells.push_back(i);
    s.output_rule = MergeRule::concatenate;
    s.head = {1, Activation::linear};
    return s;
}

SpaceSpec uno_small_spec() {
    SpaceSpec s;
    s.name = "uno_small";
    s.inputs = {{"rna", Shape::features(942)},
                {"dose", Shape::features(1)},
                {"descriptors", Shape::features(5270)},
                {"fingerprints", Shape::features(2048)}};

    CellSpec c0;
    for (const auto& in : s.inputs)
        c0.blocks.push_back(BlockSpec::chain(TensorRef::in(in.name), mlp_nodes(3)));
    s.cells.push_back(std::move(c0));

    // residual tail: MLP, MLP, Add, MLP, Add with skips n0->n2 and n2->n4
    CellSpec c1;
    BlockSpec b;
    b.inputs = {TensorRef::cell_out(0)};
    b.nodes = {mlp_node(), mlp_node(), NodeSpec::Constant(LayerOp::Add()), mlp_node(),
               NodeSpec::Constant(LayerOp::Add())};
    b.edges = {{-1, 0}, {0, 1}, {1, 2}, {0, 2}, {2, 3}, {3, 4}, {2, 4}};
    c1.blocks.push_back(std::move(b));
    s.cells.push_back(std::move(c1));

    s.head = {1, Activation::linear};
    return s;
}

SpaceSpec uno_large_spec() {
    SpaceSpec s;
    s.name = "uno_large";
    s.inputs = {{"rna", Shape::features(942)},
                {"dose", Shape::features(1)},
                {"descriptors", Shape::features(5270)},
                {"fingerprints", Shape::features(2048)}};

    CellSpec c0;
    for (const auto& in : s.inputs)
        c0.blocks.push_back(BlockSpec::chain(TensorRef::in(in.name), mlp_nodes(3)));
    s.cells.push_back(std::move(c0));

    for (int i = 1; i <= 8; ++i) {
        CellSpec c;
        c.blocks.push_back(BlockSpec::chain(TensorRef::cell_out(i - 1), {mlp_node()}));

        std::vector<LayerOp> connect{LayerOp::Connect({})};
        // all nonempty input combinations, by size then declaration order
        const int n_in = 4;
        for (int size = 1; size <= n_in; ++size) {
            // iterative enumeration of ordered index subsets
            std::vector<int> idx(size);
            for (int k = 0; k < size; ++k) idx[k] = k;
            while (true) {
                std::vector<TensorRef> ts;
                for (int k : idx) ts.push_back(TensorRef::in(s.inputs[k].name));
                connect.push_back(LayerOp::Connect(std::move(ts)));
                int k = size - 1;
                while (k >= 0 && idx[k] == n_in - size + k) --k;
                if (k < 0) break;
                ++idx[k];
                for (int m = k + 1; m < size; ++m) idx[m] = idx[m - 1] + 1;
            }
        }
        for (int p = 0; p < i; ++p) connect.push_back(LayerOp::Connect({TensorRef::cell_out(p)}));
        for (int p = 1; p < i; ++p)
            connect.push_back(LayerOp::Connect({TensorRef::node_out({p, 0, 0})}));

        c.blocks.push_back(BlockSpec::chain(TensorRef::cell_out(i - 1),
                                            {NodeSpec::Variable(std::move(connect))}));
        s.cells.push_back(std::move(c));
    }

    s.head = {1, Activation::linear};
    return s;
}

SpaceSpec nt3_small_spec() {
    SpaceSpec s;
    s.name = "nt3_small";
    s.inputs = {{"rna", Shape::sequence(60483, 1)}};

    auto conv_node = NodeSpec::Variable({
        LayerOp::Identity(),
        LayerOp::Conv1D(8, 3),
        LayerOp::Conv1D(8, 4),
        LayerOp::Conv1D(8, 5),
        LayerOp::Conv1D(8, 6),
    });
    auto act_node = NodeSpec::Variable({
        LayerOp::Identity(),
        LayerOp::Act(Activation::relu),
        LayerOp::Act(Activation::tanh),
        LayerOp::Act(Activation::sigmoid),
    });
    auto pool_node = NodeSpec::Variable({
        LayerOp::Identity(),
        LayerOp::MaxPool1D(3),
        LayerOp::MaxPool1D(4),
        LayerOp::MaxPool1D(5),
        LayerOp::MaxPool1D(6),
    });
    auto dense_node = NodeSpec::Variable({
        LayerOp::Identity(),
        LayerOp::Dense(10),
        LayerOp::Dense(50),
        LayerOp::Dense(100),
        LayerOp::Dense(200),
        LayerOp::Dense(250),
        LayerOp::Dense(500),
        LayerOp::Dense(750),
        LayerOp::Dense(1000),
    });
    auto drop_node = NodeSpec::Variable({
        LayerOp::Identity(),
        LayerOp::Dropout(0.5),
        LayerOp::Dropout(0.4),
        LayerOp::Dropout(0.3),
        LayerOp::Dropout(0.2),
        LayerOp::Dropout(0.1),
        LayerOp::Dropout(0.05),
    });

    for (int i = 0; i < 4; ++i) {
        CellSpec c;
        TensorRef in = i == 0 ? TensorRef::in("rna") : TensorRef::cell_out(i - 1);
        if (i < 2)
            c.blocks.push_back(BlockSpec::chain(in, {conv_node, act_node, pool_node}));
        else
            c.blocks.push_back(BlockSpec::chain(in, {dense_node, act_node, drop_node}));
        s.cells.push_back(std::move(c));
    }

    s.head = {2, Activation::softmax};
    return s;
}

// Fixed stacks expressed as single-choice variable nodes so baselines reuse
// the regular decode path (mirrors need a variable referent).
NodeSpec fixed(LayerOp op) { return NodeSpec::Variable({std::move(op)}); }

std::vector<NodeSpec> dense_stack(int n, int width) {
    std::vector<NodeSpec> v;
    for (int i = 0; i < n; ++i) v.push_back(fixed(LayerOp::Dense(width, Activation::relu)));
    return v;
}

SpaceSpec combo_baseline_spec(long cell_dim, long drug_dim, int width) {
    SpaceSpec s;
    s.name = "baseline:combo";
    s.inputs = {{"cell", Shape::features(cell_dim)},
                {"drug1", Shape::features(drug_dim)},
                {"drug2", Shape::features(drug_dim)}};
    CellSpec c0;
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("cell"), dense_stack(3, width)));
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("drug1"), dense_stack(3, width)));
    c0.blocks.push_back(BlockSpec::chain(
        TensorRef::in("drug2"), {NodeSpec::Mirror({0, 1, 0}), NodeSpec::Mirror({0, 1, 1}),
                                 NodeSpec::Mirror({0, 1, 2})}));
    s.cells.push_back(std::move(c0));
    CellSpec c1;
    c1.blocks.push_back(BlockSpec::chain(TensorRef::cell_out(0), dense_stack(3, width)));
    s.cells.push_back(std::move(c1));
    s.head = {1, Activation::linear};
    return s;
}

SpaceSpec uno_baseline_spec() {
    SpaceSpec s;
    s.name = "baseline:uno";
    s.inputs = {{"rna", Shape::features(942)},
                {"dose", Shape::features(1)},
                {"descriptors", Shape::features(5270)},
                {"fingerprints", Shape::features(2048)}};
    CellSpec c0;
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("rna"), dense_stack(3, 1000)));
    // the dose scalar feeds the concatenation directly
    c0.blocks.push_back(
        BlockSpec::chain(TensorRef::in("dose"), {NodeSpec::Constant(LayerOp::Identity())}));
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("descriptors"), dense_stack(3, 1000)));
    c0.blocks.push_back(BlockSpec::chain(TensorRef::in("fingerprints"), dense_stack(3, 1000)));
    s.cells.push_back(std::move(c0));
    CellSpec c1;
    c1.blocks.push_back(BlockSpec::chain(TensorRef::cell_out(0), dense_stack(3, 1000)));
    s.cells.push_back(std::move(c1));
    s.head = {1, Activation::linear};
    return s;
}

SpaceSpec nt3_baseline_spec() {
    SpaceSpec s;
    s.name = "baseline:nt3";
    s.inputs = {{"rna", Shape::sequence(60483, 1)}};
    CellSpec c0;
    BlockSpec b;
    b.inputs = {TensorRef::in("rna")};
    b.nodes = {
        NodeSpec::Constant(LayerOp::Conv1D(128, 20)),
        NodeSpec::Constant(LayerOp::Act(Activation::relu)),
        NodeSpec::Constant(LayerOp::MaxPool1D(1)),
        NodeSpec::Constant(LayerOp::Conv1D(128, 10)),
        NodeSpec::Constant(LayerOp::Act(Activation::relu)),
        NodeSpec::Constant(LayerOp::MaxPool1D(10)),
        NodeSpec::Constant(LayerOp::Dense(200, Activation::relu)),
        NodeSpec::Constant(LayerOp::Dropout(0.1)),
        NodeSpec::Constant(LayerOp::Dense(20, Activation::relu)),
        NodeSpec::Constant(LayerOp::Dropout(0.1)),
    };
    c0.blocks.push_back(std::move(b));
    s.cells.push_back(std::move(c0));
    s.head = {2, Activation::softmax};
    return s;
}

ArchGraph decode_fixed(const SpaceSpec& spec) {
    auto space = SearchSpace::build(spec);
    return space.decode(Encoding(space.slots().size(), 0));
}

}  // namespace

std::vector<std::string> builtin_space_names() {
    return {"combo_small", "combo_large", "combo_mini", "uno_small", "uno_large", "nt3_small"};
}

SpaceSpec builtin_space(const std::string& name) {
    if (name == "combo_small") return combo_like("combo_small", 942, 3820, mlp_choices(), 1);
    if (name == "combo_large") return combo_like("combo_large", 942, 3820, mlp_choices(), 8);
    if (name == "combo_mini") return combo_like("combo_mini", 24, 32, mini_mlp_choices(), 1);
    if (name == "uno_small") return uno_small_spec();
    if (name == "uno_large") return uno_large_spec();
    if (name == "nt3_small") return nt3_small_spec();
    throw ConfigError("unknown builtin space: " + name);
}

ArchGraph builtin_baseline(const std::string& name) {
    if (name == "combo") return decode_fixed(combo_baseline_spec(942, 3820, 1000));
    if (name == "uno") return decode_fixed(uno_baseline_spec());
    if (name == "nt3") return decode_fixed(nt3_baseline_spec());
    throw ConfigError("unknown baseline: " + name);
}

ArchGraph combo_reference_graph(const std::vector<long>& dims, int width) {
    if (dims.size() != 3) throw ConfigError("combo reference needs 3 input widths");
    if (dims[1] != dims[2])
        throw ConfigError("combo reference drug groups must have equal widths");
    return decode_fixed(combo_baseline_spec(dims[0], dims[1], width));
}

}  // namespace nas::space
