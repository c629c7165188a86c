#include <algorithm>
#include <sstream>

#include "nas/netbench.hpp"

namespace nas::netbench {

using space::ArchNode;
using space::LayerOp;

namespace {

std::string shape_err(const std::string& id, const std::string& msg, const Shape& s) {
    return "shape error at '" + id + "': " + msg + " (input shape " + s.str() + ")";
}

}  // namespace

std::vector<std::string> TensorProgram::input_names() const {
    std::vector<std::string> names;
    for (const auto& op : ops_)
        if (op.kind == ProgNode::Kind::input) names.push_back(op.input_name);
    return names;
}

json TensorProgram::summary() const {
    json layers = json::array();
    for (const auto& op : ops_) {
        json j;
        j["id"] = op.id;
        j["shape"] = op.shape.str();
        long p = op.param_block >= 0 ? blocks_[op.param_block].count : 0;
        j["params"] = p;
        if (op.param_block >= 0) j["shared_as"] = blocks_[op.param_block].tag;
        layers.push_back(j);
    }
    return json{{"layers", layers},
                {"trainable_params", total_params_},
                {"loss", loss_ == LossKind::mse ? "mse" : "cross_entropy"}};
}

long count_params(const TensorProgram& p) { return p.param_count(); }

TensorProgram compile(const space::ArchGraph& graph,
                      const std::map<std::string, Shape>& input_shapes, LossKind loss) {
    TensorProgram prog;
    prog.loss_ = loss;

    std::map<std::string, int> block_of_tag;

    auto add_block = [&](const std::string& tag, long out, long in, long kernel, long ch,
                         bool bias) -> int {
        if (auto it = block_of_tag.find(tag); it != block_of_tag.end()) {
            // shared reuse: geometry must agree or the share is unsound
            const ParamBlock& b = prog.blocks_[it->second];
            if (b.out != out || b.in != in || b.kernel != kernel || b.ch != ch)
                throw ShapeError("shared weight block '" + tag +
                                 "' reused with a different geometry");
            return it->second;
        }
        ParamBlock b;
        b.tag = tag;
        b.out = out;
        b.in = in;
        b.kernel = kernel;
        b.ch = ch;
        b.bias = bias;
        b.count = kernel > 0 ? out * kernel * ch + (bias ? out : 0) : out * in + (bias ? out : 0);
        b.offset = prog.total_params_;
        prog.total_params_ += b.count;
        int idx = static_cast<int>(prog.blocks_.size());
        prog.blocks_.push_back(b);
        block_of_tag[tag] = idx;
        return idx;
    };

    // graph node index -> program node index
    std::vector<int> prog_of(graph.nodes.size(), -1);

    for (size_t gi = 0; gi < graph.nodes.size(); ++gi) {
        const ArchNode& n = graph.nodes[gi];
        ProgNode op;
        op.id = n.id;

        if (n.role == ArchNode::Role::input) {
            op.kind = ProgNode::Kind::input;
            op.input_name = n.input_name;
            op.shape = n.input_shape;
            if (auto it = input_shapes.find(n.input_name); it != input_shapes.end()) {
                if (it->second.seq != n.input_shape.seq)
                    throw ShapeError("input '" + n.input_name + "' rank override not allowed");
                op.shape = it->second;
            }
            prog_of[gi] = static_cast<int>(prog.ops_.size());
            prog.ops_.push_back(std::move(op));
            continue;
        }

        std::vector<int> ins;
        for (int g_in : n.in) ins.push_back(prog_of[g_in]);
        auto in_shape = [&](int k) -> const Shape& { return prog.ops_[ins[k]].shape; };

        switch (n.op.kind) {
            case LayerOp::Kind::dense: {
                // dense flattens sequence inputs, mirroring the baselines'
                // flatten-before-dense layout
                long in_width = in_shape(0).flat();
                op.kind = ProgNode::Kind::dense;
                op.units = n.op.units;
                op.act = n.op.act;
                op.shape = Shape::features(n.op.units);
                op.param_block = add_block(n.share_tag.empty() ? n.id : n.share_tag, n.op.units,
                                           in_width, 0, 0, true);
                break;
            }
            case LayerOp::Kind::conv1d: {
                const Shape& s = in_shape(0);
                if (!s.seq) throw ShapeError(shape_err(n.id, "conv1d needs a sequence input", s));
                long out_len = (s.len - n.op.kernel) / n.op.stride + 1;
                if (s.len < n.op.kernel)
                    throw ShapeError(shape_err(n.id, "kernel larger than sequence", s));
                op.kind = ProgNode::Kind::conv1d;
                op.filters = n.op.filters;
                op.kernel = n.op.kernel;
                op.stride = n.op.stride;
                op.shape = Shape::sequence(out_len, n.op.filters);
                op.param_block = add_block(n.share_tag.empty() ? n.id : n.share_tag, n.op.filters,
                                           0, n.op.kernel, s.ch, true);
                break;
            }
            case LayerOp::Kind::maxpool1d: {
                const Shape& s = in_shape(0);
                if (!s.seq) throw ShapeError(shape_err(n.id, "pooling needs a sequence input", s));
                long out_len = s.len / n.op.pool;
                if (out_len < 1) throw ShapeError(shape_err(n.id, "pool window too large", s));
                op.kind = ProgNode::Kind::maxpool1d;
                op.pool = n.op.pool;
                op.shape = Shape::sequence(out_len, s.ch);
                break;
            }
            case LayerOp::Kind::dropout:
                op.kind = ProgNode::Kind::dropout;
                op.rate = n.op.rate;
                op.shape = in_shape(0);
                break;
            case LayerOp::Kind::activation:
                op.kind = ProgNode::Kind::activation;
                op.act = n.op.act;
                op.shape = in_shape(0);
                break;
            case LayerOp::Kind::concat: {
                // sequences concatenate on channels when lengths agree,
                // otherwise everything is flattened
                bool all_seq = true;
                for (size_t k = 0; k < ins.size(); ++k) all_seq &= in_shape(k).seq;
                if (all_seq) {
                    long len = in_shape(0).len, ch = 0;
                    bool same_len = true;
                    for (size_t k = 0; k < ins.size(); ++k) {
                        same_len &= in_shape(k).len == len;
                        ch += in_shape(k).ch;
                    }
                    if (same_len) {
                        op.shape = Shape::sequence(len, ch);
                        op.kind = ProgNode::Kind::concat;
                        break;
                    }
                }
                long width = 0;
                for (size_t k = 0; k < ins.size(); ++k) width += in_shape(k).flat();
                op.kind = ProgNode::Kind::concat;
                op.shape = Shape::features(width);
                break;
            }
            case LayerOp::Kind::add: {
                // widths must match; narrower flat operands get an implicit
                // linear projection onto the widest one
                for (size_t k = 0; k < ins.size(); ++k)
                    if (in_shape(k).seq)
                        throw ShapeError(shape_err(n.id, "add over sequences is not supported",
                                                   in_shape(k)));
                long widest = 0;
                for (size_t k = 0; k < ins.size(); ++k)
                    widest = std::max(widest, in_shape(k).flat());
                std::vector<int> addends;
                for (size_t k = 0; k < ins.size(); ++k) {
                    if (in_shape(k).flat() == widest) {
                        addends.push_back(ins[k]);
                        continue;
                    }
                    ProgNode proj;
                    proj.kind = ProgNode::Kind::project;
                    proj.id = n.id + ".proj" + std::to_string(k);
                    proj.in = {ins[k]};
                    proj.units = static_cast<int>(widest);
                    proj.shape = Shape::features(widest);
                    proj.param_block =
                        add_block(proj.id, widest, in_shape(k).flat(), 0, 0, false);
                    addends.push_back(static_cast<int>(prog.ops_.size()));
                    prog.ops_.push_back(std::move(proj));
                }
                op.kind = ProgNode::Kind::add;
                op.shape = Shape::features(widest);
                ins = std::move(addends);
                break;
            }
            case LayerOp::Kind::identity:
            case LayerOp::Kind::connect:
                throw Error("decoded graphs must not contain identity/connect nodes (" + n.id +
                            ")");
        }

        op.in = std::move(ins);
        prog_of[gi] = static_cast<int>(prog.ops_.size());
        prog.ops_.push_back(std::move(op));
    }

    if (loss == LossKind::cross_entropy && prog.ops_.back().act != space::Activation::softmax)
        throw ShapeError("cross-entropy head must use a softmax activation");
    return prog;
}

}  // namespace nas::netbench
