#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "nas/netbench.hpp"

namespace nas::netbench {

namespace fs = std::filesystem;

namespace {

Matrix read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("missing file: " + path);
    std::string line;
    if (!std::getline(f, line)) throw ConfigError("empty file: " + path);
    long cols = 1;
    for (char c : line) cols += c == ',';

    std::vector<double> values;
    long rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        long got = 0;
        const char* p = line.c_str();
        char* end = nullptr;
        while (true) {
            double x = std::strtod(p, &end);
            if (end == p) throw ConfigError("bad number in " + path + " row " +
                                            std::to_string(rows + 2));
            values.push_back(x);
            ++got;
            p = end;
            while (*p == ' ') ++p;
            if (*p != ',') break;
            ++p;
        }
        if (got != cols)
            throw ConfigError("ragged row in " + path + ": row " + std::to_string(rows + 2) +
                              " has " + std::to_string(got) + " fields, header has " +
                              std::to_string(cols));
        ++rows;
    }
    Matrix m(rows, cols);
    m.v = std::move(values);
    return m;
}

void write_csv(const std::string& path, const Matrix& m, const std::string& col_prefix) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ConfigError("cannot write " + path);
    for (long c = 0; c < m.cols; ++c)
        std::fprintf(f, "%s%s%ld", c ? "," : "", col_prefix.c_str(), c);
    std::fprintf(f, "\n");
    for (long r = 0; r < m.rows; ++r) {
        for (long c = 0; c < m.cols; ++c)
            std::fprintf(f, "%s%.10g", c ? "," : "", m.at(r, c));
        std::fprintf(f, "\n");
    }
    std::fclose(f);
}

TabularDataset::Split load_split(const json& j, const std::string& base) {
    TabularDataset::Split s;
    auto rel = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (fs::path(base) / p).string();
    };
    for (const auto& [name, file] : j.at("inputs").items()) {
        s.group_names.push_back(name);
        s.groups.push_back(read_csv(rel(file.get<std::string>())));
    }
    s.output = read_csv(rel(j.at("output").get<std::string>()));
    return s;
}

}  // namespace

TabularDataset load_dataset(const std::string& manifest_path) {
    std::ifstream f(manifest_path);
    if (!f) throw ConfigError("missing manifest: " + manifest_path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("bad manifest json: ") + e.what());
    }
    std::string base = fs::path(manifest_path).parent_path().string();

    TabularDataset d;
    const std::string task = j.value("task", "regression");
    if (task == "regression") {
        d.task = TaskKind::regression;
    } else if (task == "classification") {
        d.task = TaskKind::classification;
        d.classes = j.value("classes", 2);
    } else {
        throw ConfigError("unknown task kind: " + task);
    }

    if (j.contains("train") && j.contains("valid")) {
        d.train = load_split(j.at("train"), base);
        d.valid = load_split(j.at("valid"), base);
    } else {
        // single file set plus a seeded row split
        auto whole = load_split(j, base);
        double frac = 0.2;
        uint64_t seed = 1;
        if (j.contains("split")) {
            frac = j.at("split").value("validation_fraction", 0.2);
            seed = j.at("split").value("seed", 1ULL);
        }
        long rows = whole.output.rows;
        long n_valid = std::max<long>(1, std::lround(frac * rows));
        std::vector<long> order(rows);
        for (long i = 0; i < rows; ++i) order[i] = i;
        Rng rng(seed);
        for (long i = rows - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_int(static_cast<int>(i + 1))]);

        auto take = [&](long from, long count) {
            TabularDataset::Split s;
            s.group_names = whole.group_names;
            for (const auto& g : whole.groups) {
                Matrix m(count, g.cols);
                for (long r = 0; r < count; ++r)
                    std::copy(g.row(order[from + r]), g.row(order[from + r]) + g.cols, m.row(r));
                s.groups.push_back(std::move(m));
            }
            s.output = Matrix(count, whole.output.cols);
            for (long r = 0; r < count; ++r)
                std::copy(whole.output.row(order[from + r]),
                          whole.output.row(order[from + r]) + whole.output.cols, s.output.row(r));
            return s;
        };
        d.valid = take(0, n_valid);
        d.train = take(n_valid, rows - n_valid);
    }
    d.validate();
    return d;
}

namespace {

struct GroupDef {
    std::string name;
    long dim;
    bool seq = false;
};

// Small random-teacher regression/classification surfaces over gaussian
// features. One hidden tanh layer per group keeps the target learnable by
// narrow networks. The teacher is a function of `teacher_seed` alone so that
// train and validation rows share one ground truth.
void generate_rows(const std::vector<GroupDef>& groups, TaskKind task, uint64_t teacher_seed,
                   uint64_t data_seed, long rows, std::vector<Matrix>& xs, Matrix& y) {
    Rng teacher_rng(seed_mix(teacher_seed, 101));
    const int hidden = 6;
    std::vector<std::vector<double>> W(groups.size());
    std::vector<std::vector<double>> b(groups.size());
    std::vector<std::vector<double>> v(groups.size());
    for (size_t g = 0; g < groups.size(); ++g) {
        W[g].resize(hidden * groups[g].dim);
        b[g].resize(hidden);
        v[g].resize(hidden);
        for (auto& w : W[g]) w = teacher_rng.normal() / std::sqrt((double)groups[g].dim);
        for (auto& x : b[g]) x = 0.3 * teacher_rng.normal();
        for (auto& x : v[g]) x = teacher_rng.normal();
    }

    Rng data_rng(seed_mix(data_seed, 202));
    xs.clear();
    for (const auto& g : groups) xs.emplace_back(rows, g.dim);
    y = Matrix(rows, 1);

    for (long r = 0; r < rows; ++r) {
        double t = 0.0;
        for (size_t g = 0; g < groups.size(); ++g) {
            double* row = xs[g].row(r);
            for (long c = 0; c < groups[g].dim; ++c) row[c] = data_rng.normal();
            for (int h = 0; h < hidden; ++h) {
                double acc = b[g][h];
                for (long c = 0; c < groups[g].dim; ++c)
                    acc += W[g][h * groups[g].dim + c] * row[c];
                t += v[g][h] * std::tanh(acc);
            }
        }
        if (task == TaskKind::regression)
            y.at(r, 0) = t + 0.05 * data_rng.normal();
        else
            y.at(r, 0) = t + 0.1 * data_rng.normal() > 0.0 ? 1.0 : 0.0;
    }
}

}  // namespace

std::string generate_dataset(const std::string& preset, uint64_t seed, long rows,
                             const std::string& out_dir) {
    std::vector<GroupDef> groups;
    TaskKind task = TaskKind::regression;
    if (preset == "combo-mini") {
        groups = {{"cell", 24}, {"drug1", 32}, {"drug2", 32}};
    } else if (preset == "uno-mini") {
        groups = {{"rna", 24}, {"dose", 1}, {"descriptors", 32}, {"fingerprints", 16}};
    } else if (preset == "nt3-mini") {
        groups = {{"rna", 120, true}};
        task = TaskKind::classification;
    } else {
        throw ConfigError("unknown dataset preset: " + preset);
    }
    if (rows <= 0) rows = 2000;
    long valid_rows = std::max<long>(1, rows / 4);

    fs::create_directories(out_dir);

    json manifest;
    manifest["task"] = task == TaskKind::regression ? "regression" : "classification";
    if (task == TaskKind::classification) manifest["classes"] = 2;
    manifest["preset"] = preset;
    manifest["seed"] = seed;

    for (const char* split : {"train", "valid"}) {
        bool is_train = std::string(split) == "train";
        std::vector<Matrix> xs;
        Matrix y;
        generate_rows(groups, task, seed, seed_mix(seed, is_train ? 1 : 2),
                      is_train ? rows : valid_rows, xs, y);
        json in_files;
        for (size_t g = 0; g < groups.size(); ++g) {
            std::string fname = std::string(split) + "_" + groups[g].name + ".csv";
            write_csv((fs::path(out_dir) / fname).string(), xs[g], groups[g].name);
            in_files[groups[g].name] = fname;
        }
        std::string yname = std::string(split) + "_y.csv";
        write_csv((fs::path(out_dir) / yname).string(), y, "y");
        manifest[split] = {{"inputs", in_files}, {"output", yname}};
    }
    if (!groups.empty() && groups[0].seq)
        manifest["sequence_inputs"] = {{groups[0].name, {{"channels", 1}}}};

    std::string mpath = (fs::path(out_dir) / "manifest.json").string();
    std::ofstream mf(mpath);
    mf << manifest.dump(2) << "\n";
    return mpath;
}

SyntheticLandscape SyntheticLandscape::make(std::vector<int> arities, uint64_t seed,
                                            int interaction_terms) {
    SyntheticLandscape l;
    l.arities_ = std::move(arities);
    Rng rng(seed);
    double max_sum = 0.0;
    for (int a : l.arities_) {
        std::vector<double> row(a);
        for (auto& x : row) x = rng.uniform();
        max_sum += *std::max_element(row.begin(), row.end());
        l.scores_.push_back(std::move(row));
    }
    int slots = static_cast<int>(l.arities_.size());
    double bonus_sum = 0.0;
    if (slots >= 2) {
        for (int i = 0; i < interaction_terms; ++i) {
            Interaction it;
            it.slot_a = rng.uniform_int(slots - 1);
            it.slot_b = it.slot_a + 1 + rng.uniform_int(slots - 1 - it.slot_a);
            it.choice_a = rng.uniform_int(l.arities_[it.slot_a]);
            it.choice_b = rng.uniform_int(l.arities_[it.slot_b]);
            it.bonus = 0.25 * rng.uniform();
            bonus_sum += it.bonus;
            l.interactions_.push_back(it);
        }
    }
    l.norm_ = max_sum + bonus_sum;
    if (l.norm_ <= 0.0) l.norm_ = 1.0;
    return l;
}

double SyntheticLandscape::reward(const space::Encoding& enc) const {
    if (enc.size() != arities_.size())
        throw Error("landscape arity mismatch: encoding has " + std::to_string(enc.size()) +
                    " slots, landscape " + std::to_string(arities_.size()));
    double total = 0.0;
    for (size_t k = 0; k < enc.size(); ++k) {
        if (enc[k] < 0 || enc[k] >= arities_[k]) throw Error("landscape choice out of range");
        total += scores_[k][enc[k]];
    }
    for (const auto& it : interactions_)
        if (enc[it.slot_a] == it.choice_a && enc[it.slot_b] == it.choice_b) total += it.bonus;
    return total / norm_;
}

std::pair<space::Encoding, double> SyntheticLandscape::exhaustive_optimum(uint64_t limit) const {
    uint64_t total = 1;
    for (int a : arities_) {
        total *= static_cast<uint64_t>(a);
        if (total > limit) throw Error("space too large for exhaustive search");
    }
    space::Encoding enc(arities_.size(), 0), best_enc = enc;
    double best = reward(enc);
    for (uint64_t i = 1; i < total; ++i) {
        size_t k = 0;
        while (k < enc.size()) {
            if (++enc[k] < arities_[k]) break;
            enc[k] = 0;
            ++k;
        }
        double r = reward(enc);
        if (r > best) {
            best = r;
            best_enc = enc;
        }
    }
    return {best_enc, best};
}

}  // namespace nas::netbench
