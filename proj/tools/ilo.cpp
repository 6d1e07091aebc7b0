// ilo: model synthesis, solving, paired benchmarks, theory tables and
// S-REC certification from JSON experiment configs.
//
// Exit codes: 0 success, 2 config error, 3 runtime error.

#include "ilo/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string method;
    bool quiet = false;
};

ilo::ExperimentConfig load(const Options &o) {
    std::ifstream in(o.config);
    if (!in) throw ilo::ConfigError("cannot open config file '" + o.config + "'");
    nlohmann::json root;
    try {
        root = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error &e) {
        throw ilo::ParseError(o.config, std::string("invalid JSON: ") + e.what());
    }
    if (o.seed) {
        if (!root.is_object()) throw ilo::ParseError("$", "config must be a JSON object");
        root["seed"] = *o.seed;
    }
    auto cfg = ilo::parse_experiment(root);
    if (!o.method.empty()) {
        const auto m = o.method == "csgm" ? ilo::Method::csgm : ilo::Method::ilo;
        cfg.solver.method = m;
        cfg.methods = {m};
    }
    return cfg;
}

std::string out_path(const Options &o, const ilo::ExperimentConfig &c) {
    if (!o.out.empty()) return o.out;
    return c.output.value_or("");
}

void emit(const std::string &path, const std::string &text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

void note(const Options &o, const std::string &msg) {
    if (!o.quiet) std::cerr << msg << '\n';
}

void cmd_gen_model(const Options &o) {
    const auto cfg = load(o);
    const auto res = ilo::run_gen_model(cfg);
    const std::string path = out_path(o, cfg);
    emit(path, ilo::model_to_json(res.model).dump(1) + "\n");
    // Bounds go to stdout unless stdout already carries the model.
    std::ostream &os = path.empty() || path == "-" ? std::cerr : std::cout;
    if (o.quiet && &os == &std::cerr) return;
    os << "layer,in,out,lipschitz\n";
    for (std::size_t i = 0; i < res.model.num_layers(); ++i) {
        const auto &l = res.model.layer(i);
        os << i << ',' << l.in_dim() << ',' << l.out_dim() << ',' << ilo::detail::fmt_double(res.bounds.per_layer[i])
           << '\n';
    }
    os << "total,,," << ilo::detail::fmt_double(res.bounds.total()) << '\n';
}

void cmd_solve(const Options &o) {
    const auto cfg = load(o);
    const auto res = ilo::run_solve(cfg);
    emit(out_path(o, cfg), res.report.dump(1) + "\n");
    note(o, std::string(ilo::to_string(cfg.solver.method)) + ": best_loss " +
                ilo::detail::fmt_double(res.result.report.best_loss) + ", true_mse " +
                ilo::detail::fmt_double(res.result.report.true_mse.value_or(-1.0)));
}

void cmd_bench(const Options &o) {
    const auto cfg = load(o);
    const auto res = ilo::run_bench(cfg);
    emit(out_path(o, cfg), ilo::bench_csv(res));
    note(o, "bench: " + std::to_string(res.rows.size()) + " rows");
}

void cmd_theory(const Options &o) {
    const auto cfg = load(o);
    if (!cfg.theory) throw ilo::ConfigError("config has no 'theory' section");
    emit(out_path(o, cfg), ilo::run_theory(*cfg.theory));
}

void cmd_srec(const Options &o) {
    const auto cfg = load(o);
    const auto res = ilo::run_srec(cfg);
    emit(out_path(o, cfg), res.report.dump(1) + "\n");
    note(o, "srec: median delta " + ilo::detail::fmt_double(res.report["median"].get<double>()) + ", additive term " +
                ilo::detail::fmt_double(res.additive_term) + (res.m_capped ? " (m capped at n)" : ""));
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Intermediate layer optimization for inverse problems"};
    app.require_subcommand(1);
    Options o;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("--config", o.config, "experiment config (JSON)")->required();
        sub->add_option("--out", o.out, "output path; '-' or absent writes to stdout");
        sub->add_option("--seed", o.seed, "override the master seed");
        sub->add_option("--method", o.method, "restrict to one method")->check(CLI::IsMember({"csgm", "ilo"}));
        sub->add_flag("--quiet", o.quiet, "suppress progress on stderr");
    };
    struct Cmd {
        const char *name;
        const char *help;
        void (*fn)(const Options &);
    };
    const Cmd cmds[] = {{"gen-model", "synthesize a generator and write it as JSON", cmd_gen_model},
                        {"solve", "recover one planted signal", cmd_solve},
                        {"bench", "paired CSGM/ILO sweep as CSV", cmd_bench},
                        {"theory-table", "covering and sample-complexity tables as CSV", cmd_theory},
                        {"srec-test", "Monte-Carlo S-REC check as JSON", cmd_srec}};
    void (*chosen)(const Options &) = nullptr;
    for (const auto &c : cmds) {
        auto *sub = app.add_subcommand(c.name, c.help);
        add_common(sub);
        sub->callback([&chosen, fn = c.fn] { chosen = fn; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }
    try {
        chosen(o);
    } catch (const ilo::ParseError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ilo::ConfigError &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::out_of_range &e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
