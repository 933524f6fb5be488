#include "umc/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "umc/evalkit.hpp"

namespace umc {

namespace {

RunConfig baseline_of(RunConfig c) {
    c.refiner = RefinerVariant::None;
    c.refiner_masked = false;
    c.selection = SelectionKind::Full;
    c.joint_mask = false;
    return c;
}

// Module toggles: ER = fusion refiner, SA = top-k 8 selection, MA = refiner and joint masks.
RunConfig toggled(const RunConfig& base, bool er, bool sa, bool ma) {
    RunConfig c = baseline_of(base);
    if (er) {
        c.refiner = RefinerVariant::Fusion;
    }
    if (sa) {
        c.selection = SelectionKind::TopK;
        c.selection_k = 8;
    }
    if (ma) {
        c.joint_mask = true;
        c.refiner_masked = true;
    }
    return c;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return "";
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

std::vector<std::string> ablation_grid_names() { return {"umc-vs-baseline", "modules", "topk", "refiners", "selection"}; }

std::vector<AblationCell> ablation_grid(const std::string& name, const RunConfig& base) {
    std::vector<AblationCell> cells;
    if (name == "umc-vs-baseline") {
        cells.push_back({"baseline", toggled(base, false, false, false)});
        cells.push_back({"umc", toggled(base, true, true, true)});
    } else if (name == "modules") {
        cells.push_back({"baseline", toggled(base, false, false, false)});
        cells.push_back({"+MA", toggled(base, false, false, true)});
        cells.push_back({"+SA", toggled(base, false, true, false)});
        cells.push_back({"+ER", toggled(base, true, false, false)});
        cells.push_back({"+SA+MA", toggled(base, false, true, true)});
        cells.push_back({"+ER+MA", toggled(base, true, false, true)});
        cells.push_back({"+ER+SA", toggled(base, true, true, false)});
        cells.push_back({"umc", toggled(base, true, true, true)});
    } else if (name == "topk") {
        for (const bool er : {false, true}) {
            for (const int k : {4, 8, 16, 32}) {
                RunConfig c = toggled(base, er, true, false);
                c.selection_k = k;
                cells.push_back({"k=" + std::to_string(k) + (er ? "+ER" : ""), c});
            }
        }
    } else if (name == "refiners") {
        for (const RefinerVariant v : {RefinerVariant::None, RefinerVariant::Mlp, RefinerVariant::Joint,
                                       RefinerVariant::Parallel, RefinerVariant::Fusion}) {
            RunConfig c = toggled(base, true, true, true);
            c.refiner = v;
            cells.push_back({"refiner=" + to_string(v), c});
        }
    } else if (name == "selection") {
        auto strategy = [&](const std::string& id, SelectionKind kind, int k, double p, double tau) {
            RunConfig c = toggled(base, true, true, true);
            c.selection = kind;
            c.selection_k = k;
            c.selection_p = p;
            c.selection_tau = tau;
            cells.push_back({id, c});
        };
        strategy("full", SelectionKind::Full, 8, 0.2, 1.0);
        for (const int k : {4, 8, 16, 32}) {
            strategy("top-k=" + std::to_string(k), SelectionKind::TopK, k, 0.2, 1.0);
        }
        strategy("top-p", SelectionKind::TopP, 8, 0.2, 1.0);
        strategy("top-p-tau", SelectionKind::TopPTau, 8, 0.2, 0.8);
        strategy("top-pk", SelectionKind::TopPK, 8, 0.2, 1.0);
    } else {
        fail(ErrorKind::Config, "unknown ablation grid '" + name + "'");
    }
    return cells;
}

std::vector<AblationCell> parse_grid_file(const std::string& text, const RunConfig& base) {
    std::vector<AblationCell> cells;
    std::vector<std::string> bodies;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (!t.empty() && t.front() == '[') {
            require(t.back() == ']' && t.size() > 2, ErrorKind::Config, "bad grid header '" + t + "'");
            cells.push_back({t.substr(1, t.size() - 2), base});
            bodies.emplace_back();
            continue;
        }
        if (t.empty() || t.front() == '#') {
            continue;
        }
        require(!cells.empty(), ErrorKind::Config, "grid override '" + t + "' before any [cell] header");
        bodies.back() += line + "\n";
    }
    require(!cells.empty(), ErrorKind::Config, "grid file defines no cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
        // Overrides replace the base value of each key they name.
        std::string merged;
        std::istringstream base_lines(base.serialize());
        std::string base_line;
        std::set<std::string> named;
        std::istringstream body(bodies[i]);
        std::string b;
        while (std::getline(body, b)) {
            const auto eq = b.find('=');
            if (eq != std::string::npos) {
                named.insert(trim(b.substr(0, eq)));
            }
        }
        while (std::getline(base_lines, base_line)) {
            const std::string key = trim(base_line.substr(0, base_line.find('=')));
            if (named.count(key) == 0) {
                merged += base_line + "\n";
            }
        }
        cells[i].config = RunConfig::parse(merged + bodies[i]);
    }
    return cells;
}

RunConfig with_budget(const RunConfig& config, long budget) {
    require(budget >= 1, ErrorKind::Config, "budget must be >= 1");
    std::vector<StageSpec> plan = parse_stage_plan(config.stage_plan);
    long total = 0;
    for (const StageSpec& s : plan) {
        total += s.steps;
    }
    require(total > 0, ErrorKind::Config, "stage plan has no steps to rescale");
    long assigned = 0;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const long steps = i + 1 == plan.size() ? budget - assigned
                                                : std::lround(static_cast<double>(plan[i].steps) * budget / total);
        plan[i].steps = static_cast<int>(steps);
        assigned += steps;
    }
    RunConfig out = config;
    out.stage_plan = format_stage_plan(plan);
    return out;
}

RunConfig with_seed(const RunConfig& config, std::uint64_t seed) {
    RunConfig out = config;
    out.init_seed = seed;
    out.train_seed = seed;
    out.sample_seed = seed;
    return out;
}

std::vector<SceneSpec> eval_specs(const RunConfig& config) {
    std::vector<SceneSpec> specs;
    for (const SceneSpec& spec : held_out_specs(config.eval_size)) {
        if (config.allows(spec.bucket)) {
            specs.push_back(spec);
        }
    }
    require(!specs.empty(), ErrorKind::Config, "no held-out scene falls in the configured buckets");
    return specs;
}

AblationRow run_cell(const std::string& id, const RunConfig& config, const StageCallback& on_stage,
                     ParameterStore<float>* trained_params) {
    AblationRow row;
    row.cell = id;
    row.seed = config.train_seed;
    try {
        config.validate();
        const Dataset all = synthesize_dataset(config.data_seed, config.dataset_size);
        Dataset data;
        for (const TrainingExample& ex : all.examples) {
            if (config.allows(ex.spec.bucket)) {
                data.add(ex);
            }
        }
        const DiTConfig model = config.model();
        TrainResult trained =
            train(initialize_parameters(declare_model(model), config.init_seed), data, config.train_options(), on_stage);
        const std::vector<SceneSpec> specs = eval_specs(config);
        const EvalReport report = evaluate_model(trained.params, model, specs, model.sampler_steps, config.sample_seed);
        row.consistency = report.consistency_mean;
        row.alignment = report.alignment_mean;
        row.final_loss = trained.final_loss;
        row.validation_loss = validation_loss(trained.params, model, specs, config.sample_seed);
        row.ok = true;
        if (trained_params != nullptr) {
            *trained_params = std::move(trained.params);
        }
    } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
    }
    return row;
}

std::vector<AblationRow> ablation_run(const std::vector<AblationCell>& cells, const AblationOptions& options) {
    require(!options.seeds.empty(), ErrorKind::Config, "ablation needs at least one seed");
    std::vector<AblationRow> rows;
    for (const AblationCell& cell : cells) {
        for (const std::uint64_t seed : options.seeds) {
            RunConfig c = with_seed(cell.config, seed);
            AblationRow row;
            try {
                if (options.budget > 0) {
                    c = with_budget(c, options.budget);
                }
                row = run_cell(cell.id, c);
            } catch (const std::exception& e) {
                row.cell = cell.id;
                row.seed = seed;
                row.error = e.what();
            }
            if (options.on_row) {
                options.on_row(row);
            }
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::string out = "cell,seed,status,consistency,alignment,final_loss,validation_loss,error\n";
    char buf[256];
    for (const AblationRow& r : rows) {
        std::string error = r.error;
        for (char& c : error) {
            if (c == ',' || c == '\n') {
                c = ';';
            }
        }
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f", r.consistency, r.alignment, r.final_loss, r.validation_loss);
        out += r.cell + "," + std::to_string(r.seed) + "," + (r.ok ? "ok" : "failed") + "," + buf + "," + error + "\n";
    }
    return out;
}

}  // namespace umc
