// Writes a generated corpus split (source-type train/valid, target-type
// corpus) and its precomputed token features.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "msfner/error.hpp"
#include "msfner/synthetic.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Generate a synthetic few-shot NER corpus with precomputed features"};
    msfner::SyntheticConfig cfg;
    std::string out;
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--seed", cfg.seed, "generator seed");
    app.add_option("--num-types", cfg.num_types);
    app.add_option("--source-types", cfg.source_types);
    app.add_option("--train-sentences", cfg.train_sentences);
    app.add_option("--valid-sentences", cfg.valid_sentences);
    app.add_option("--target-sentences", cfg.target_sentences);
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }
    try {
        const auto data = msfner::generate_synthetic(cfg);
        std::filesystem::create_directories(out);
        const std::filesystem::path root(out);
        const auto fmt = msfner::CorpusFormat::BioesTyped;
        std::ofstream(root / "train.txt") << msfner::serialize_corpus(data.train, fmt);
        std::ofstream(root / "valid.txt") << msfner::serialize_corpus(data.valid, fmt);
        std::ofstream(root / "target.txt") << msfner::serialize_corpus(data.target, fmt);
        msfner::write_embedding_file((root / "embeddings.msfe").string(), data.embeddings);
        std::cout << "feature dim " << data.feature_dim << "\n";
    } catch (const msfner::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const msfner::Error& e) {
        std::cerr << e.what() << "\n";
        return 3;
    }
    return 0;
}
