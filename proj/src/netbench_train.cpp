#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "nas/netbench.hpp"
#include "nas/optim.hpp"

namespace nas::netbench {

using space::Activation;
using Kind = ProgNode::Kind;

namespace {

void apply_activation(Activation act, Matrix& m) {
    switch (act) {
        case Activation::linear: return;
        case Activation::relu:
            for (auto& x : m.v) x = x > 0.0 ? x : 0.0;
            return;
        case Activation::tanh:
            for (auto& x : m.v) x = std::tanh(x);
            return;
        case Activation::sigmoid:
            for (auto& x : m.v) x = 1.0 / (1.0 + std::exp(-x));
            return;
        case Activation::softmax:
            for (long r = 0; r < m.rows; ++r) {
                double* row = m.row(r);
                double mx = *std::max_element(row, row + m.cols);
                double sum = 0.0;
                for (long c = 0; c < m.cols; ++c) sum += (row[c] = std::exp(row[c] - mx));
                for (long c = 0; c < m.cols; ++c) row[c] /= sum;
            }
            return;
    }
}

// dL/dz from dL/dy and y = act(z); softmax is handled at the loss.
void activation_backward(Activation act, const Matrix& y, Matrix& grad) {
    switch (act) {
        case Activation::linear: return;
        case Activation::relu:
            for (size_t i = 0; i < grad.v.size(); ++i) grad.v[i] *= y.v[i] > 0.0 ? 1.0 : 0.0;
            return;
        case Activation::tanh:
            for (size_t i = 0; i < grad.v.size(); ++i) grad.v[i] *= 1.0 - y.v[i] * y.v[i];
            return;
        case Activation::sigmoid:
            for (size_t i = 0; i < grad.v.size(); ++i) grad.v[i] *= y.v[i] * (1.0 - y.v[i]);
            return;
        case Activation::softmax:
            throw Error("softmax is only supported on the output head");
    }
}

struct Caches {
    std::vector<Matrix> out;          // per op
    std::vector<Matrix> mask;         // dropout masks / pool argmax (as doubles)
    bool training = false;
};

}  // namespace

struct Workspace {
    Caches c;
};

namespace {

void forward(const TensorProgram& prog, const std::vector<const Matrix*>& inputs,
             const std::vector<double>& params, bool training, Rng* drop_rng, Caches& c) {
    const auto& ops = prog.ops();
    c.out.assign(ops.size(), Matrix());
    c.mask.assign(ops.size(), Matrix());
    c.training = training;

    size_t input_i = 0;
    for (size_t oi = 0; oi < ops.size(); ++oi) {
        const ProgNode& op = ops[oi];
        switch (op.kind) {
            case Kind::input: {
                c.out[oi] = *inputs.at(input_i++);
                if (c.out[oi].cols != op.shape.flat())
                    throw ShapeError("input '" + op.input_name + "' has width " +
                                     std::to_string(c.out[oi].cols) + ", program expects " +
                                     std::to_string(op.shape.flat()));
                break;
            }
            case Kind::dense:
            case Kind::project: {
                const Matrix& x = c.out[op.in[0]];
                const ParamBlock& b = prog.blocks()[op.param_block];
                const double* W = params.data() + b.offset;
                const double* bias = W + b.out * b.in;
                Matrix y(x.rows, b.out);
                for (long r = 0; r < x.rows; ++r) {
                    const double* xr = x.row(r);
                    double* yr = y.row(r);
                    for (long o = 0; o < b.out; ++o) {
                        const double* w = W + o * b.in;
                        double acc = b.bias ? bias[o] : 0.0;
                        for (long i = 0; i < b.in; ++i) acc += w[i] * xr[i];
                        yr[o] = acc;
                    }
                }
                if (op.kind == Kind::dense) apply_activation(op.act, y);
                c.out[oi] = std::move(y);
                break;
            }
            case Kind::conv1d: {
                const Matrix& x = c.out[op.in[0]];
                const Shape in_shape = prog.ops()[op.in[0]].shape;
                const ParamBlock& b = prog.blocks()[op.param_block];
                const double* W = params.data() + b.offset;
                const double* bias = W + b.out * b.kernel * b.ch;
                long out_len = op.shape.len;
                Matrix y(x.rows, out_len * b.out);
                for (long r = 0; r < x.rows; ++r) {
                    const double* xr = x.row(r);
                    double* yr = y.row(r);
                    for (long l = 0; l < out_len; ++l) {
                        long base = l * op.stride;
                        for (long f = 0; f < b.out; ++f) {
                            const double* w = W + f * b.kernel * b.ch;
                            double acc = bias[f];
                            for (long k = 0; k < b.kernel; ++k)
                                for (long ch = 0; ch < b.ch; ++ch)
                                    acc += w[k * b.ch + ch] * xr[(base + k) * in_shape.ch + ch];
                            yr[l * b.out + f] = acc;
                        }
                    }
                }
                c.out[oi] = std::move(y);
                break;
            }
            case Kind::maxpool1d: {
                const Matrix& x = c.out[op.in[0]];
                const Shape in_shape = prog.ops()[op.in[0]].shape;
                long out_len = op.shape.len, ch = op.shape.ch;
                Matrix y(x.rows, out_len * ch);
                Matrix arg(x.rows, out_len * ch);
                for (long r = 0; r < x.rows; ++r) {
                    const double* xr = x.row(r);
                    for (long l = 0; l < out_len; ++l) {
                        for (long cch = 0; cch < ch; ++cch) {
                            long best = l * op.pool;
                            double bv = xr[best * in_shape.ch + cch];
                            for (long k = 1; k < op.pool; ++k) {
                                long pos = l * op.pool + k;
                                double v = xr[pos * in_shape.ch + cch];
                                if (v > bv) {
                                    bv = v;
                                    best = pos;
                                }
                            }
                            y.at(r, l * ch + cch) = bv;
                            arg.at(r, l * ch + cch) = static_cast<double>(best);
                        }
                    }
                }
                c.out[oi] = std::move(y);
                c.mask[oi] = std::move(arg);
                break;
            }
            case Kind::dropout: {
                const Matrix& x = c.out[op.in[0]];
                if (!training) {
                    c.out[oi] = x;
                    break;
                }
                double keep = 1.0 - op.rate;
                Matrix mask(x.rows, x.cols);
                Matrix y(x.rows, x.cols);
                for (size_t i = 0; i < x.v.size(); ++i) {
                    double m = (drop_rng && drop_rng->uniform() < keep) ? 1.0 / keep : 0.0;
                    if (!drop_rng) m = 1.0;
                    mask.v[i] = m;
                    y.v[i] = x.v[i] * m;
                }
                c.out[oi] = std::move(y);
                c.mask[oi] = std::move(mask);
                break;
            }
            case Kind::activation: {
                Matrix y = c.out[op.in[0]];
                apply_activation(op.act, y);
                c.out[oi] = std::move(y);
                break;
            }
            case Kind::add: {
                Matrix y = c.out[op.in[0]];
                for (size_t k = 1; k < op.in.size(); ++k) {
                    const Matrix& x = c.out[op.in[k]];
                    for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += x.v[i];
                }
                c.out[oi] = std::move(y);
                break;
            }
            case Kind::concat: {
                long rows = c.out[op.in[0]].rows;
                Matrix y(rows, op.shape.flat());
                if (op.shape.seq) {
                    // channel-wise concat of equal-length sequences
                    long ch_off = 0;
                    for (int src : op.in) {
                        const Matrix& x = c.out[src];
                        const Shape xs = prog.ops()[src].shape;
                        for (long r = 0; r < rows; ++r)
                            for (long l = 0; l < xs.len; ++l)
                                for (long cc = 0; cc < xs.ch; ++cc)
                                    y.at(r, l * op.shape.ch + ch_off + cc) =
                                        x.at(r, l * xs.ch + cc);
                        ch_off += xs.ch;
                    }
                } else {
                    long off = 0;
                    for (int src : op.in) {
                        const Matrix& x = c.out[src];
                        for (long r = 0; r < rows; ++r)
                            std::copy(x.row(r), x.row(r) + x.cols, y.row(r) + off);
                        off += x.cols;
                    }
                }
                c.out[oi] = std::move(y);
                break;
            }
        }
    }
}

// Backward pass; fills `pgrad` (same length as params). `out_grad` carries
// dL/d(output) for MSE; for cross-entropy the head is folded into the loss and
// `ce_logits_grad` is the gradient at the head's pre-activation.
void backward(const TensorProgram& prog, const std::vector<double>& params, Caches& c,
              Matrix out_grad, bool ce_head, std::vector<double>& pgrad) {
    const auto& ops = prog.ops();
    std::vector<Matrix> grad(ops.size());
    grad[ops.size() - 1] = std::move(out_grad);

    for (size_t oi = ops.size(); oi-- > 0;) {
        const ProgNode& op = ops[oi];
        Matrix& g = grad[oi];
        if (g.rows == 0) continue;  // not on any path to the loss

        auto bump = [&](int src, const Matrix& delta) {
            Matrix& gs = grad[src];
            if (gs.rows == 0) gs = Matrix(delta.rows, delta.cols);
            for (size_t i = 0; i < delta.v.size(); ++i) gs.v[i] += delta.v[i];
        };

        switch (op.kind) {
            case Kind::input: break;
            case Kind::dense:
            case Kind::project: {
                const bool last = oi + 1 == ops.size();
                if (!(ce_head && last) && op.kind == Kind::dense)
                    activation_backward(op.act, c.out[oi], g);
                const Matrix& x = c.out[op.in[0]];
                const ParamBlock& b = prog.blocks()[op.param_block];
                double* gW = pgrad.data() + b.offset;
                double* gb = gW + b.out * b.in;
                const double* W = params.data() + b.offset;
                Matrix gx(x.rows, b.in);
                for (long r = 0; r < x.rows; ++r) {
                    const double* xr = x.row(r);
                    const double* gr = g.row(r);
                    double* gxr = gx.row(r);
                    for (long o = 0; o < b.out; ++o) {
                        double go = gr[o];
                        if (go == 0.0) continue;
                        double* gw = gW + o * b.in;
                        const double* w = W + o * b.in;
                        for (long i = 0; i < b.in; ++i) {
                            gw[i] += go * xr[i];
                            gxr[i] += go * w[i];
                        }
                        if (b.bias) gb[o] += go;
                    }
                }
                bump(op.in[0], gx);
                break;
            }
            case Kind::conv1d: {
                const Matrix& x = c.out[op.in[0]];
                const Shape in_shape = prog.ops()[op.in[0]].shape;
                const ParamBlock& b = prog.blocks()[op.param_block];
                const double* W = params.data() + b.offset;
                double* gW = pgrad.data() + b.offset;
                double* gb = gW + b.out * b.kernel * b.ch;
                Matrix gx(x.rows, x.cols);
                long out_len = op.shape.len;
                for (long r = 0; r < x.rows; ++r) {
                    const double* xr = x.row(r);
                    const double* gr = g.row(r);
                    double* gxr = gx.row(r);
                    for (long l = 0; l < out_len; ++l) {
                        long base = l * op.stride;
                        for (long f = 0; f < b.out; ++f) {
                            double go = gr[l * b.out + f];
                            if (go == 0.0) continue;
                            const double* w = W + f * b.kernel * b.ch;
                            double* gw = gW + f * b.kernel * b.ch;
                            for (long k = 0; k < b.kernel; ++k)
                                for (long ch = 0; ch < b.ch; ++ch) {
                                    long pos = (base + k) * in_shape.ch + ch;
                                    gw[k * b.ch + ch] += go * xr[pos];
                                    gxr[pos] += go * w[k * b.ch + ch];
                                }
                            gb[f] += go;
                        }
                    }
                }
                bump(op.in[0], gx);
                break;
            }
            case Kind::maxpool1d: {
                const Matrix& x = c.out[op.in[0]];
                const Shape in_shape = prog.ops()[op.in[0]].shape;
                const Matrix& arg = c.mask[oi];
                Matrix gx(x.rows, x.cols);
                long out_len = op.shape.len, ch = op.shape.ch;
                for (long r = 0; r < x.rows; ++r)
                    for (long l = 0; l < out_len; ++l)
                        for (long cc = 0; cc < ch; ++cc) {
                            long pos = static_cast<long>(arg.at(r, l * ch + cc));
                            gx.at(r, pos * in_shape.ch + cc) += g.at(r, l * ch + cc);
                        }
                bump(op.in[0], gx);
                break;
            }
            case Kind::dropout: {
                if (!c.training) {
                    bump(op.in[0], g);
                    break;
                }
                const Matrix& mask = c.mask[oi];
                Matrix gx(g.rows, g.cols);
                for (size_t i = 0; i < g.v.size(); ++i) gx.v[i] = g.v[i] * mask.v[i];
                bump(op.in[0], gx);
                break;
            }
            case Kind::activation: {
                activation_backward(op.act, c.out[oi], g);
                bump(op.in[0], g);
                break;
            }
            case Kind::add: {
                for (int src : op.in) bump(src, g);
                break;
            }
            case Kind::concat: {
                if (op.shape.seq) {
                    long ch_off = 0;
                    for (int src : op.in) {
                        const Shape xs = prog.ops()[src].shape;
                        Matrix gx(g.rows, xs.flat());
                        for (long r = 0; r < g.rows; ++r)
                            for (long l = 0; l < xs.len; ++l)
                                for (long cc = 0; cc < xs.ch; ++cc)
                                    gx.at(r, l * xs.ch + cc) =
                                        g.at(r, l * op.shape.ch + ch_off + cc);
                        ch_off += xs.ch;
                        bump(src, gx);
                    }
                } else {
                    long off = 0;
                    for (int src : op.in) {
                        const Matrix& x = c.out[src];
                        Matrix gx(g.rows, x.cols);
                        for (long r = 0; r < g.rows; ++r)
                            std::copy(g.row(r) + off, g.row(r) + off + x.cols, gx.row(r));
                        off += x.cols;
                        bump(src, gx);
                    }
                }
                break;
            }
        }
    }
}

double loss_and_grad(const TensorProgram& prog, const Matrix& pred, const Matrix& target,
                     Matrix* out_grad) {
    if (prog.loss() == LossKind::mse) {
        if (pred.rows != target.rows || pred.cols != target.cols)
            throw ShapeError("prediction/target shape mismatch");
        double scale = 1.0 / (static_cast<double>(pred.rows) * pred.cols);
        double loss = 0.0;
        if (out_grad) *out_grad = Matrix(pred.rows, pred.cols);
        for (size_t i = 0; i < pred.v.size(); ++i) {
            double d = pred.v[i] - target.v[i];
            loss += d * d * scale;
            if (out_grad) out_grad->v[i] = 2.0 * d * scale;
        }
        return loss;
    }
    // cross-entropy over softmax probabilities; target column holds class ids
    if (target.cols != 1) throw ShapeError("classification target must be one column");
    double loss = 0.0;
    double scale = 1.0 / static_cast<double>(pred.rows);
    if (out_grad) *out_grad = Matrix(pred.rows, pred.cols);
    for (long r = 0; r < pred.rows; ++r) {
        long cls = static_cast<long>(target.at(r, 0));
        if (cls < 0 || cls >= pred.cols) throw ShapeError("class id out of range");
        double p = std::max(pred.at(r, cls), 1e-12);
        loss -= std::log(p) * scale;
        if (out_grad)
            for (long c = 0; c < pred.cols; ++c)
                out_grad->at(r, c) = (pred.at(r, c) - (c == cls ? 1.0 : 0.0)) * scale;
    }
    return loss;
}

}  // namespace

std::vector<double> init_params(const TensorProgram& prog, uint64_t seed) {
    std::vector<double> params(prog.param_count(), 0.0);
    Rng rng(seed);
    for (const auto& b : prog.blocks()) {
        long fan_in = b.kernel > 0 ? b.kernel * b.ch : b.in;
        long fan_out = b.out;
        double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        long weights = b.kernel > 0 ? b.out * b.kernel * b.ch : b.out * b.in;
        for (long i = 0; i < weights; ++i) params[b.offset + i] = rng.uniform(-a, a);
        // biases stay zero
    }
    return params;
}

Matrix program_predict(const TensorProgram& prog, const std::vector<const Matrix*>& inputs,
                       const std::vector<double>& params) {
    Caches c;
    forward(prog, inputs, params, false, nullptr, c);
    return c.out.back();
}

double program_loss(const TensorProgram& prog, const std::vector<const Matrix*>& inputs,
                    const Matrix& target, const std::vector<double>& params) {
    Caches c;
    Rng drop(0);  // fixed masks keep the loss a deterministic function of params
    forward(prog, inputs, params, true, &drop, c);
    return loss_and_grad(prog, c.out.back(), target, nullptr);
}

std::vector<double> program_loss_gradient(const TensorProgram& prog,
                                          const std::vector<const Matrix*>& inputs,
                                          const Matrix& target,
                                          const std::vector<double>& params) {
    Caches c;
    Rng drop(0);
    forward(prog, inputs, params, true, &drop, c);
    Matrix og;
    loss_and_grad(prog, c.out.back(), target, &og);
    std::vector<double> pgrad(params.size(), 0.0);
    backward(prog, params, c, std::move(og), prog.loss() == LossKind::cross_entropy, pgrad);
    return pgrad;
}

double r_squared(const Matrix& pred, const Matrix& truth) {
    double mean = 0.0;
    for (double y : truth.v) mean += y;
    mean /= static_cast<double>(truth.v.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (size_t i = 0; i < truth.v.size(); ++i) {
        double d = truth.v[i] - pred.v[i];
        ss_res += d * d;
        double c = truth.v[i] - mean;
        ss_tot += c * c;
    }
    if (ss_tot <= 0.0) return ss_res <= 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
    return 1.0 - ss_res / ss_tot;
}

double accuracy(const Matrix& pred, const Matrix& truth) {
    long hits = 0;
    for (long r = 0; r < pred.rows; ++r) {
        long best = 0;
        for (long c = 1; c < pred.cols; ++c)
            if (pred.at(r, c) > pred.at(r, best)) best = c;
        if (best == static_cast<long>(truth.at(r, 0))) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.rows);
}

const Matrix& TabularDataset::group(const Split& s, const std::string& name) const {
    for (size_t i = 0; i < s.group_names.size(); ++i)
        if (s.group_names[i] == name) return s.groups[i];
    throw ConfigError("dataset has no input group '" + name + "'");
}

void TabularDataset::validate() const {
    for (const Split* s : {&train, &valid}) {
        if (s->groups.empty()) throw ConfigError("dataset split has no input groups");
        long rows = s->output.rows;
        for (size_t i = 0; i < s->groups.size(); ++i)
            if (s->groups[i].rows != rows)
                throw ConfigError("row count mismatch in group '" + s->group_names[i] + "': " +
                                  std::to_string(s->groups[i].rows) + " vs " +
                                  std::to_string(rows) + " output rows");
    }
    if (task == TaskKind::classification && classes < 2)
        throw ConfigError("classification dataset needs >= 2 classes");
}

TrainOutcome train_and_score(const TensorProgram& prog, const TabularDataset& data,
                             const FidelityBudget& budget, uint64_t seed) {
    using clock = std::chrono::steady_clock;
    auto t0 = clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - t0).count(); };

    TrainOutcome out;
    out.params = prog.param_count();

    const auto names = prog.input_names();
    std::vector<const Matrix*> train_groups, valid_groups;
    for (const auto& n : names) {
        train_groups.push_back(&data.group(data.train, n));
        valid_groups.push_back(&data.group(data.valid, n));
    }

    Rng rng(seed);
    std::vector<double> params = init_params(prog, rng.next());
    AdamState adam(params.size(), budget.learning_rate);
    Rng drop_rng(rng.next());
    Rng shuffle_rng(rng.next());

    // seeded subset of the training rows
    long total_rows = data.train.output.rows;
    long take = std::max<long>(1, std::lround(budget.subset_fraction * total_rows));
    std::vector<long> pool(total_rows);
    std::iota(pool.begin(), pool.end(), 0);
    for (long i = total_rows - 1; i > 0; --i)
        std::swap(pool[i], pool[shuffle_rng.uniform_int(static_cast<int>(i + 1))]);
    pool.resize(take);

    long bs = std::max(1, budget.batch_size);
    std::vector<double> pgrad(params.size());

    for (int epoch = 0; epoch < budget.epochs; ++epoch) {
        double epoch_loss = 0.0;
        long batches = 0;
        for (long i = take - 1; i > 0; --i)
            std::swap(pool[i], pool[shuffle_rng.uniform_int(static_cast<int>(i + 1))]);
        for (long start = 0; start < take; start += bs) {
            long n = std::min(bs, take - start);
            std::vector<Matrix> batch_in;
            batch_in.reserve(train_groups.size());
            for (const Matrix* gmat : train_groups) {
                Matrix b(n, gmat->cols);
                for (long r = 0; r < n; ++r)
                    std::copy(gmat->row(pool[start + r]), gmat->row(pool[start + r]) + gmat->cols,
                              b.row(r));
                batch_in.push_back(std::move(b));
            }
            Matrix target(n, data.train.output.cols);
            for (long r = 0; r < n; ++r)
                std::copy(data.train.output.row(pool[start + r]),
                          data.train.output.row(pool[start + r]) + data.train.output.cols,
                          target.row(r));

            std::vector<const Matrix*> ptrs;
            for (const auto& m : batch_in) ptrs.push_back(&m);

            Caches c;
            forward(prog, ptrs, params, true, &drop_rng, c);
            Matrix og;
            double loss = loss_and_grad(prog, c.out.back(), target, &og);
            if (!std::isfinite(loss)) {
                out.status = TrainOutcome::Status::failed;
                out.reward = -1.0;
                out.seconds = elapsed();
                return out;
            }
            epoch_loss += loss;
            ++batches;
            std::fill(pgrad.begin(), pgrad.end(), 0.0);
            backward(prog, params, c, std::move(og),
                     prog.loss() == LossKind::cross_entropy, pgrad);
            adam_update(params, adam, pgrad);

            if (elapsed() > budget.timeout_seconds) {
                out.status = TrainOutcome::Status::timeout;
                out.reward = -1.0;
                out.seconds = elapsed();
                return out;
            }
        }
        out.epoch_losses.push_back(epoch_loss / static_cast<double>(std::max(1L, batches)));
    }

    Matrix pred = program_predict(prog, valid_groups, params);
    double metric = data.task == TaskKind::regression ? r_squared(pred, data.valid.output)
                                                      : accuracy(pred, data.valid.output);
    out.raw_metric = metric;
    if (!std::isfinite(metric)) {
        out.status = TrainOutcome::Status::failed;
        out.reward = -1.0;
    } else {
        out.status = TrainOutcome::Status::ok;
        out.reward = std::clamp(metric, -1.0, 1.0);
    }
    out.seconds = elapsed();
    return out;
}

}  // namespace nas::netbench
