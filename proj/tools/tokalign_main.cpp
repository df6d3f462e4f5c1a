// tokalign command line tool.
//
// Subcommands: eval | compare | align | train | gen | selftest.
// stdout carries only each subcommand's declared output; everything else
// goes to stderr. Exit codes: 0 ok, 2 unreadable or malformed embedding
// file, 3 dimension mismatch, 4 pair index out of range, 1 anything else.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tokalign/core.hpp"
#include "tokalign/harness.hpp"
#include "tokalign/io.hpp"
#include "tokalign/metrics.hpp"
#include "tokalign/selfcheck.hpp"
#include "tokalign/strategies.hpp"
#include "tokalign/types.hpp"

namespace {

using namespace tokalign;

constexpr const char* kStrategyNames[] = {"uniform", "learnable", "scan",     "max-avg",
                                          "max-sum", "emd",       "tokenflow"};

struct StrategyFlags {
    std::string name = "tokenflow";
    std::optional<double> lambda;
    std::optional<double> blend;

    void attach(CLI::App& sub) {
        sub.add_option("--strategy", name, "Alignment strategy")
            ->check(CLI::IsMember(std::vector<std::string>(std::begin(kStrategyNames),
                                                           std::end(kStrategyNames))))
            ->capture_default_str();
        sub.add_option("--lambda", lambda, "Softmax inverse temperature");
        sub.add_option("--blend", blend, "Global blend weight w_g in [0, 1]");
    }

    StrategyConfig config() const {
        StrategyConfig cfg = StrategyConfig::for_kind(strategy_from_string(name));
        if (lambda) cfg.lambda = *lambda;
        if (blend) cfg.global_blend_w = *blend;
        cfg.validate();
        if (cfg.kind == Strategy::Learnable)
            throw InvalidParameter(
                "the learnable strategy needs a trained parameter matrix and has no "
                "file-level source here; pick another strategy");
        return cfg;
    }
};

struct CorpusFlags {
    CorpusSpec spec;

    void attach(CLI::App& sub) {
        sub.add_option("--pairs", spec.n_pairs, "Item pairs in the corpus")
            ->capture_default_str();
        sub.add_option("--tokens", spec.tokens_per_item, "Tokens per item")
            ->capture_default_str();
        sub.add_option("--dim", spec.dim, "Embedding dimension")->capture_default_str();
        sub.add_option("--concepts", spec.concept_count, "Concept pool size")
            ->capture_default_str();
        sub.add_option("--sigma", spec.noise_sigma, "Per-token noise level")
            ->capture_default_str();
        sub.add_flag("--collision", spec.collision_mode,
                     "Confuser corpus whose mean-pooled globals coincide");
    }
};

void print_reports(const Mat<double>& s_v, const Mat<double>& s_t, const std::vector<int>& ks,
                   const std::string& row_prefix) {
    std::vector<Index> truth(static_cast<std::size_t>(s_v.rows()));
    for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = Index(i);
    const RetrievalReport t2v = retrieval_report(s_t.transpose(), truth, ks);
    const RetrievalReport v2t = retrieval_report(s_v, truth, ks);
    std::cout << row_prefix << "t2v " << to_string(t2v) << "\n";
    std::cout << row_prefix << "v2t " << to_string(v2t) << "\n";
}

LoadedEmbeddings load_checked(const std::string& path) {
    LoadedEmbeddings le = load_embeddings(path);
    if (le.items.empty()) throw FileError(path + ": no items");
    return le;
}

int cmd_eval(const std::string& visual_path, const std::string& text_path,
             const StrategyFlags& sf, const std::vector<int>& ks, int threads) {
    const LoadedEmbeddings vis = load_checked(visual_path);
    const LoadedEmbeddings txt = load_checked(text_path);
    if (vis.items.size() != txt.items.size())
        throw DimMismatch("eval: item counts differ (" + std::to_string(vis.items.size()) +
                          " vs " + std::to_string(txt.items.size()) + ")");
    const auto [s_v, s_t] = score_matrices(vis.items, txt.items, sf.config(), threads);
    print_reports(s_v, s_t, ks, "");
    return 0;
}

int cmd_compare(const std::string& visual_path, const std::string& text_path,
                const std::vector<std::string>& strategies, const StrategyFlags& sf,
                const std::vector<int>& ks, int threads) {
    const LoadedEmbeddings vis = load_checked(visual_path);
    const LoadedEmbeddings txt = load_checked(text_path);
    if (vis.items.size() != txt.items.size())
        throw DimMismatch("compare: item counts differ");
    std::cout << "strategy\tdirection\treport\n";
    for (const std::string& name : strategies) {
        StrategyFlags row = sf;
        row.name = name;
        const auto [s_v, s_t] = score_matrices(vis.items, txt.items, row.config(), threads);
        std::vector<Index> truth(static_cast<std::size_t>(s_v.rows()));
        for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = Index(i);
        std::cout << name << "\tt2v\t" << to_string(retrieval_report(s_t.transpose(), truth, ks))
                  << "\n";
        std::cout << name << "\tv2t\t" << to_string(retrieval_report(s_v, truth, ks)) << "\n";
    }
    return 0;
}

int cmd_align(const std::string& visual_path, const std::string& text_path,
              const std::vector<Index>& pair, const StrategyFlags& sf, int top_k,
              const std::string& out_path) {
    const LoadedEmbeddings vis = load_checked(visual_path);
    const LoadedEmbeddings txt = load_checked(text_path);
    const Index i = pair[0], j = pair[1];
    if (i < 0 || j < 0 || i >= Index(vis.items.size()) || j >= Index(txt.items.size()))
        throw IndexOutOfRange("align: pair " + std::to_string(i) + " " + std::to_string(j) +
                              " out of range");
    if (out_path.empty()) {
        dump_alignment(vis.items[std::size_t(i)], txt.items[std::size_t(j)], sf.config(),
                       std::cout, top_k);
    } else {
        std::ofstream out(out_path);
        if (!out) throw FileError(out_path + ": cannot open for writing");
        dump_alignment(vis.items[std::size_t(i)], txt.items[std::size_t(j)], sf.config(), out,
                       top_k);
    }
    return 0;
}

// Splices `--config FILE` occurrences into `--key=value` arguments in place,
// so config keys resolve against the same option table as real flags and
// unknown keys fail like unknown flags would.
std::vector<std::string> expand_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    for (std::size_t i = 0; i < args.size();) {
        std::string file;
        std::size_t consumed = 0;
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw FileError("--config: missing file argument");
            file = args[i + 1];
            consumed = 2;
        } else if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
            consumed = 1;
        } else {
            ++i;
            continue;
        }
        std::ifstream in(file);
        if (!in) throw FileError(file + ": cannot open config file");
        std::vector<std::string> expanded;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            line = trim(line);
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            const std::string where = file + ":" + std::to_string(lineno);
            if (eq == std::string::npos || eq == 0)
                throw FileError(where + ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw FileError(where + ": empty key");
            if (key == "config") throw FileError(where + ": config files cannot nest");
            expanded.push_back("--" + key + "=" + value);
        }
        args.erase(args.begin() + long(i), args.begin() + long(i + consumed));
        args.insert(args.begin() + long(i), expanded.begin(), expanded.end());
        i += expanded.size();
    }
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Token-level cross-modal alignment toolkit"};
    app.require_subcommand(1);

    int threads = 1;
    std::uint64_t seed = 1;
    app.add_option("--threads", threads, "Worker threads for score matrices")
        ->capture_default_str();
    app.add_option("--seed", seed, "Seed for seeded subcommands")->capture_default_str();

    auto configure = [](CLI::App* sub) {
        // The real work happens in expand_config_args before parsing; this
        // option exists so --config shows up in the subcommand's help.
        sub->add_option("--config", "Flat key=value overrides for this subcommand")
            ->type_name("FILE");
        return sub;
    };

    // eval
    auto* eval = configure(app.add_subcommand("eval", "Retrieval reports for two files"));
    std::string visual_path, text_path;
    eval->add_option("visual", visual_path, "Visual embedding file")->required();
    eval->add_option("text", text_path, "Text embedding file")->required();
    StrategyFlags eval_sf;
    eval_sf.attach(*eval);
    std::vector<int> ks{1, 5, 10};
    eval->add_option("--ks", ks, "Recall cutoffs")->delimiter(',')->capture_default_str();

    // compare
    auto* compare = configure(app.add_subcommand("compare", "One eval row per strategy"));
    std::string cmp_visual, cmp_text;
    compare->add_option("visual", cmp_visual, "Visual embedding file")->required();
    compare->add_option("text", cmp_text, "Text embedding file")->required();
    std::vector<std::string> cmp_strategies{"uniform", "max-avg", "scan", "tokenflow"};
    compare->add_option("--strategies", cmp_strategies, "Strategies, in output order")
        ->delimiter(',')
        ->capture_default_str();
    StrategyFlags cmp_sf;
    cmp_sf.attach(*compare);
    std::vector<int> cmp_ks{1, 5, 10};
    compare->add_option("--ks", cmp_ks, "Recall cutoffs")->delimiter(',')->capture_default_str();

    // align
    auto* align = configure(app.add_subcommand("align", "Alignment dump for one pair"));
    std::string aln_visual, aln_text, aln_out;
    align->add_option("visual", aln_visual, "Visual embedding file")->required();
    align->add_option("text", aln_text, "Text embedding file")->required();
    std::vector<Index> aln_pair{0, 0};
    align->add_option("--pair", aln_pair, "Visual and text item indices")
        ->expected(2)
        ->capture_default_str();
    StrategyFlags aln_sf;
    aln_sf.attach(*align);
    int aln_top_k = 10;
    align->add_option("--top-k", aln_top_k, "Top contributions to list")->capture_default_str();
    align->add_option("--out", aln_out, "Write the dump here instead of stdout");

    // train
    auto* train = configure(app.add_subcommand("train", "Toy trainer on a synthetic corpus"));
    CorpusFlags train_corpus;
    train_corpus.attach(*train);
    StrategyFlags train_sf;
    train_sf.attach(*train);
    TrainConfig tc;
    train->add_option("--steps", tc.steps, "Training steps")->capture_default_str();
    train->add_option("--lr", tc.lr, "Learning rate")->capture_default_str();
    train->add_option("--batch", tc.batch, "Batch size")->capture_default_str();
    bool md_on = false;
    MdConfig md;
    train->add_flag("--md", md_on, "Momentum distillation on");
    train->add_option("--md-alpha", md.target_alpha, "Soft target mixing weight")
        ->capture_default_str();
    train->add_option("--md-momentum", md.ema_momentum, "Teacher EMA momentum")
        ->capture_default_str();
    train->add_option("--md-queue", md.queue_len, "Feature queue capacity")
        ->capture_default_str();
    std::string param_mode = "embedding-direct";
    train->add_option("--param-mode", param_mode, "What the trainer updates")
        ->check(CLI::IsMember({"embedding-direct", "linear-projection"}))
        ->capture_default_str();
    train->add_option("--logit-scale", tc.logit_scale, "Contrastive logit scale")
        ->capture_default_str();
    train->add_flag("--global-loss-term", tc.global_as_loss_term,
                    "Blend globally via a separate loss term instead of the pair score");
    train->add_option("--holdout-every", tc.holdout_every, "Hold out every n-th unit")
        ->capture_default_str();

    // gen
    auto* gen = configure(
        app.add_subcommand("gen", "Write a synthetic corpus as two embedding files"));
    CorpusFlags gen_corpus;
    gen_corpus.attach(*gen);
    std::string gen_visual = "visual.alnf", gen_text = "text.alnf";
    gen->add_option("--visual-out", gen_visual, "Visual output file")->capture_default_str();
    gen->add_option("--text-out", gen_text, "Text output file")->capture_default_str();
    bool gen_no_globals = false;
    gen->add_flag("--no-globals", gen_no_globals,
                  "Omit stored globals so loaders synthesize them");

    // selftest
    auto* selftest =
        app.add_subcommand("selftest", "Run the acceptance checks; nonzero exit on failure");

    std::vector<std::string> args;
    try {
        args = expand_config_args(argc, argv);
    } catch (const FileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    std::reverse(args.begin(), args.end());  // App::parse consumes from the back
    try {
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*eval) return cmd_eval(visual_path, text_path, eval_sf, ks, threads);
        if (*compare)
            return cmd_compare(cmp_visual, cmp_text, cmp_strategies, cmp_sf, cmp_ks, threads);
        if (*align) return cmd_align(aln_visual, aln_text, aln_pair, aln_sf, aln_top_k, aln_out);
        if (*train) {
            train_corpus.spec.seed = seed;
            tc.strategy = train_sf.config();
            tc.md = md_on ? std::optional<MdConfig>(md) : std::nullopt;
            tc.param_mode = param_mode == "embedding-direct" ? ParamMode::EmbeddingDirect
                                                             : ParamMode::LinearProjection;
            tc.seed = seed;
            const Corpus corpus = generate_corpus(train_corpus.spec);
            std::cout << to_lines(train_toy(tc, corpus));
            return 0;
        }
        if (*gen) {
            gen_corpus.spec.seed = seed;
            const Corpus corpus = generate_corpus(gen_corpus.spec);
            save_embeddings(gen_visual, corpus.visual, !gen_no_globals);
            save_embeddings(gen_text, corpus.textual, !gen_no_globals);
            std::cerr << "wrote " << corpus.visual.size() << " items to " << gen_visual
                      << " and " << gen_text << "\n";
            return 0;
        }
        if (*selftest) return print_acceptance(std::cout) ? 0 : 1;
    } catch (const FileError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DimMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const IndexOutOfRange& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
