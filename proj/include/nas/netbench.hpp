#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nas/rng.hpp"
#include "nas/space.hpp"

namespace nas::netbench {

using nlohmann::json;
using space::Shape;

// Dense row-major matrix of doubles. Sequence tensors of shape (L, C) are
// stored with cols = L*C, position-major.
struct Matrix {
    long rows = 0, cols = 0;
    std::vector<double> v;
    Matrix() = default;
    Matrix(long r, long c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    double& at(long r, long c) { return v[static_cast<size_t>(r) * cols + c]; }
    double at(long r, long c) const { return v[static_cast<size_t>(r) * cols + c]; }
    double* row(long r) { return v.data() + static_cast<size_t>(r) * cols; }
    const double* row(long r) const { return v.data() + static_cast<size_t>(r) * cols; }
};

enum class LossKind { mse, cross_entropy };

struct ProgNode {
    enum class Kind { input, dense, conv1d, maxpool1d, dropout, activation, add, concat, project };
    Kind kind = Kind::input;
    std::vector<int> in;       // producer node indices
    Shape shape;               // output shape
    int param_block = -1;      // dense/conv1d/project
    space::Activation act = space::Activation::linear;
    double rate = 0.0;         // dropout
    int kernel = 0, stride = 1, pool = 0, units = 0, filters = 0;
    std::string input_name;    // kind == input
    std::string id;            // source ArchGraph node id ("" for inserted ops)
};

struct ParamBlock {
    std::string tag;       // weight-sharing tag; one block per distinct tag
    long offset = 0;       // into the flat parameter store
    long count = 0;
    long out = 0, in = 0;  // dense/project: out x in (+ out biases)
    long kernel = 0, ch = 0;  // conv1d: out filters, kernel x ch taps (+ out biases)
    bool bias = true;
};

class TensorProgram {
public:
    const std::vector<ProgNode>& ops() const { return ops_; }
    const std::vector<ParamBlock>& blocks() const { return blocks_; }
    long param_count() const { return total_params_; }
    LossKind loss() const { return loss_; }
    int output_index() const { return static_cast<int>(ops_.size()) - 1; }
    const Shape& output_shape() const { return ops_.back().shape; }
    std::vector<std::string> input_names() const;
    json summary() const;

private:
    friend TensorProgram compile(const space::ArchGraph&, const std::map<std::string, Shape>&,
                                 LossKind);
    std::vector<ProgNode> ops_;
    std::vector<ParamBlock> blocks_;
    long total_params_ = 0;
    LossKind loss_ = LossKind::mse;
};

// Shape-infers the decoded graph and lays out its parameter store. Input
// shapes default to the ones carried by the graph; entries in `input_shapes`
// override them (training data may be narrower than the space's declared
// dimensions).
TensorProgram compile(const space::ArchGraph& graph,
                      const std::map<std::string, Shape>& input_shapes = {},
                      LossKind loss = LossKind::mse);

long count_params(const TensorProgram& p);

enum class TaskKind { regression, classification };

struct TabularDataset {
    struct Split {
        std::vector<std::string> group_names;
        std::vector<Matrix> groups;  // parallel to group_names
        Matrix output;               // regression: 1 col; classification: class index
    };
    TaskKind task = TaskKind::regression;
    int classes = 0;  // classification only
    Split train, valid;

    const Matrix& group(const Split& s, const std::string& name) const;
    void validate() const;
};

TabularDataset load_dataset(const std::string& manifest_path);

// Writes CSV files plus a manifest for a seeded synthetic dataset. Presets:
// combo-mini (3 regression input groups), uno-mini (4 groups + dose),
// nt3-mini (1 sequence group, 2-class labels).
std::string generate_dataset(const std::string& preset, uint64_t seed, long rows,
                             const std::string& out_dir);

struct FidelityBudget {
    int epochs = 1;
    double subset_fraction = 1.0;
    double timeout_seconds = 600.0;
    int batch_size = 32;
    double learning_rate = 0.001;
};

struct TrainOutcome {
    enum class Status { ok, timeout, failed };
    Status status = Status::ok;
    double reward = -1.0;      // clamped R^2 or accuracy; -1 on timeout/failure
    double seconds = 0.0;      // wall training time
    long params = 0;
    double raw_metric = 0.0;   // unclamped R^2 / accuracy when status == ok
    std::vector<double> epoch_losses;  // mean batch loss per completed epoch
};

TrainOutcome train_and_score(const TensorProgram& prog, const TabularDataset& data,
                             const FidelityBudget& budget, uint64_t seed);

// Exposed for gradient tests: full-batch loss and its parameter gradient.
struct Workspace;
double program_loss(const TensorProgram& prog, const std::vector<const Matrix*>& inputs,
                    const Matrix& target, const std::vector<double>& params);
std::vector<double> program_loss_gradient(const TensorProgram& prog,
                                          const std::vector<const Matrix*>& inputs,
                                          const Matrix& target,
                                          const std::vector<double>& params);
std::vector<double> init_params(const TensorProgram& prog, uint64_t seed);
Matrix program_predict(const TensorProgram& prog, const std::vector<const Matrix*>& inputs,
                       const std::vector<double>& params);

double r_squared(const Matrix& pred, const Matrix& truth);
double accuracy(const Matrix& pred, const Matrix& truth);

// Deterministic reward surface over an encoding space: additive per-slot
// scores plus sparse pairwise bonuses, normalized into [0, 1]. A cheap
// stand-in for model training when exercising search strategies.
class SyntheticLandscape {
public:
    static SyntheticLandscape make(std::vector<int> arities, uint64_t seed,
                                   int interaction_terms = 4);
    double reward(const space::Encoding& enc) const;
    const std::vector<int>& arities() const { return arities_; }
    // exhaustive search; throws when the space exceeds `limit` encodings
    std::pair<space::Encoding, double> exhaustive_optimum(uint64_t limit = 2000000) const;

private:
    struct Interaction {
        int slot_a, choice_a, slot_b, choice_b;
        double bonus;
    };
    std::vector<int> arities_;
    std::vector<std::vector<double>> scores_;
    std::vector<Interaction> interactions_;
    double norm_ = 1.0;
};

}  // namespace nas::netbench
