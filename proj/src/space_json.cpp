#include <fstream>

#include "nas/space.hpp"

namespace nas::space {

json LayerOp::to_json() const {
    json j;
    switch (kind) {
        case Kind::identity: j["op"] = "identity"; break;
        case Kind::dense:
            j["op"] = "dense";
            j["units"] = units;
            j["activation"] = to_string(act);
            break;
        case Kind::dropout:
            j["op"] = "dropout";
            j["rate"] = rate;
            break;
        case Kind::conv1d:
            j["op"] = "conv1d";
            j["filters"] = filters;
            j["kernel"] = kernel;
            j["stride"] = stride;
            break;
        case Kind::maxpool1d:
            j["op"] = "maxpool1d";
            j["size"] = pool;
            break;
        case Kind::activation:
            j["op"] = "activation";
            j["fn"] = to_string(act);
            break;
        case Kind::add: j["op"] = "add"; break;
        case Kind::concat: j["op"] = "concat"; break;
        case Kind::connect: {
            j["op"] = "connect";
            auto arr = json::array();
            for (const auto& t : targets) arr.push_back(t.str());
            j["targets"] = arr;
            break;
        }
    }
    return j;
}

LayerOp LayerOp::from_json(const json& j) {
    const std::string op = j.at("op").get<std::string>();
    if (op == "identity") return Identity();
    if (op == "dense")
        return Dense(j.at("units").get<int>(),
                     activation_from_string(j.value("activation", "linear")));
    if (op == "dropout") return Dropout(j.at("rate").get<double>());
    if (op == "conv1d")
        return Conv1D(j.at("filters").get<int>(), j.at("kernel").get<int>(), j.value("stride", 1));
    if (op == "maxpool1d") return MaxPool1D(j.at("size").get<int>());
    if (op == "activation") return Act(activation_from_string(j.at("fn").get<std::string>()));
    if (op == "add") return Add();
    if (op == "concat") return Concat();
    if (op == "connect") {
        std::vector<TensorRef> ts;
        for (const auto& t : j.value("targets", json::array())) ts.push_back(TensorRef::parse(t));
        return Connect(std::move(ts));
    }
    throw ConfigError("unknown layer op: " + op);
}

namespace {

json shape_to_json(const Shape& s) {
    if (s.seq) return json{{"length", s.len}, {"channels", s.ch}};
    return json{{"dim", s.len}};
}

Shape shape_from_json(const json& j) {
    if (j.contains("dim")) return Shape::features(j.at("dim").get<long>());
    return Shape::sequence(j.at("length").get<long>(), j.value("channels", 1L));
}

const char* rule_name(MergeRule r) { return r == MergeRule::concatenate ? "concat" : "add"; }

MergeRule rule_from(const std::string& s) {
    if (s == "concat") return MergeRule::concatenate;
    if (s == "add") return MergeRule::add;
    throw ConfigError("unknown merge rule: " + s);
}

}  // namespace

json SpaceSpec::to_json() const {
    json j;
    j["schema"] = 1;
    if (!name.empty()) j["name"] = name;
    auto ins = json::array();
    for (const auto& in : inputs) {
        json ji = shape_to_json(in.shape);
        ji["name"] = in.name;
        ins.push_back(ji);
    }
    j["inputs"] = ins;
    auto cells_j = json::array();
    for (const auto& cell : cells) {
        json jc;
        jc["output_rule"] = rule_name(cell.output_rule);
        auto blocks_j = json::array();
        for (const auto& block : cell.blocks) {
            json jb;
            auto bin = json::array();
            for (const auto& r : block.inputs) bin.push_back(r.str());
            jb["inputs"] = bin;
            auto nodes_j = json::array();
            for (const auto& node : block.nodes) {
                json jn;
                switch (node.kind) {
                    case NodeSpec::Kind::variable: {
                        jn["kind"] = "variable";
                        auto ch = json::array();
                        for (const auto& c : node.choices) ch.push_back(c.to_json());
                        jn["choices"] = ch;
                        break;
                    }
                    case NodeSpec::Kind::constant:
                        jn["kind"] = "constant";
                        jn["opspec"] = node.op.to_json();
                        break;
                    case NodeSpec::Kind::mirror:
                        jn["kind"] = "mirror";
                        jn["ref"] = node.ref.str();
                        break;
                }
                nodes_j.push_back(jn);
            }
            jb["nodes"] = nodes_j;
            if (!block.edges.empty()) {
                auto ed = json::array();
                for (const auto& e : block.edges) ed.push_back(json::array({e.from, e.to}));
                jb["edges"] = ed;
            }
            blocks_j.push_back(jb);
        }
        jc["blocks"] = blocks_j;
        cells_j.push_back(jc);
    }
    j["cells"] = cells_j;
    json out;
    out["rule"] = rule_name(output_rule);
    if (!output_cells.empty()) out["cells"] = output_cells;
    j["output"] = out;
    j["head"] = {{"units", head.units}, {"activation", to_string(head.act)}};
    return j;
}

SpaceSpec SpaceSpec::from_json(const json& j) {
    SpaceSpec s;
    s.name = j.value("name", "");
    for (const auto& ji : j.at("inputs"))
        s.inputs.push_back({ji.at("name").get<std::string>(), shape_from_json(ji)});
    for (const auto& jc : j.at("cells")) {
        CellSpec cell;
        cell.output_rule = rule_from(jc.value("output_rule", "concat"));
        for (const auto& jb : jc.at("blocks")) {
            BlockSpec block;
            for (const auto& r : jb.at("inputs")) block.inputs.push_back(TensorRef::parse(r));
            for (const auto& jn : jb.at("nodes")) {
                const std::string kind = jn.at("kind").get<std::string>();
                if (kind == "variable") {
                    std::vector<LayerOp> choices;
                    for (const auto& c : jn.at("choices")) choices.push_back(LayerOp::from_json(c));
                    block.nodes.push_back(NodeSpec::Variable(std::move(choices)));
                } else if (kind == "constant") {
                    block.nodes.push_back(NodeSpec::Constant(LayerOp::from_json(jn.at("opspec"))));
                } else if (kind == "mirror") {
                    block.nodes.push_back(
                        NodeSpec::Mirror(NodePath::parse(jn.at("ref").get<std::string>())));
                } else {
                    throw ConfigError("unknown node kind: " + kind);
                }
            }
            if (jb.contains("edges"))
                for (const auto& e : jb.at("edges"))
                    block.edges.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
            cell.blocks.push_back(std::move(block));
        }
        s.cells.push_back(std::move(cell));
    }
    if (j.contains("output")) {
        s.output_rule = rule_from(j.at("output").value("rule", "concat"));
        if (j.at("output").contains("cells"))
            s.output_cells = j.at("output").at("cells").get<std::vector<int>>();
    }
    if (j.contains("head")) {
        s.head.units = j.at("head").value("units", 1);
        s.head.act = activation_from_string(j.at("head").value("activation", "linear"));
    }
    return s;
}

json ArchGraph::to_json() const {
    json j;
    j["schema"] = 1;
    if (!space_name.empty()) j["space"] = space_name;
    auto nodes_j = json::array();
    for (const auto& n : nodes) {
        json jn;
        jn["id"] = n.id;
        switch (n.role) {
            case ArchNode::Role::input:
                jn["role"] = "input";
                jn["name"] = n.input_name;
                jn["shape"] = shape_to_json(n.input_shape);
                break;
            case ArchNode::Role::op:
                jn["role"] = "op";
                jn["opspec"] = n.op.to_json();
                break;
            case ArchNode::Role::head:
                jn["role"] = "head";
                jn["opspec"] = n.op.to_json();
                break;
        }
        if (!n.share_tag.empty()) jn["share"] = n.share_tag;
        if (!n.in.empty()) jn["in"] = n.in;
        nodes_j.push_back(jn);
    }
    j["nodes"] = nodes_j;
    j["decisions"] = decisions;
    return j;
}

ArchGraph ArchGraph::from_json(const json& j) {
    ArchGraph g;
    g.space_name = j.value("space", "");
    for (const auto& jn : j.at("nodes")) {
        ArchNode n;
        n.id = jn.at("id").get<std::string>();
        const std::string role = jn.at("role").get<std::string>();
        if (role == "input") {
            n.role = ArchNode::Role::input;
            n.input_name = jn.at("name").get<std::string>();
            n.input_shape = shape_from_json(jn.at("shape"));
        } else {
            n.role = role == "head" ? ArchNode::Role::head : ArchNode::Role::op;
            n.op = LayerOp::from_json(jn.at("opspec"));
        }
        n.share_tag = jn.value("share", "");
        if (jn.contains("in")) n.in = jn.at("in").get<std::vector<int>>();
        g.nodes.push_back(std::move(n));
    }
    if (j.contains("decisions")) g.decisions = j.at("decisions").get<Encoding>();
    return g;
}

SpaceSpec resolve_space(const std::string& name_or_path) {
    for (const auto& n : builtin_space_names())
        if (n == name_or_path) return builtin_space(name_or_path);
    std::ifstream f(name_or_path);
    if (!f) throw ConfigError("unknown space '" + name_or_path + "' (not a builtin, not a file)");
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("failed to parse space spec " + name_or_path + ": " + e.what());
    }
    return SpaceSpec::from_json(j);
}

}  // namespace nas::space
