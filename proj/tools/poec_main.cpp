// Command-line front end: a staged pipeline over a shared checkpoint file.
//   train-conv     learn the convolutional autoencoder filters
//   train-caps     freeze the filters, learn the capsule encoder grid
//   train-decoder  freeze the encoder, learn the capsule decoder grid
//   generate       sample hidden capsules and decode them to an image grid
//   gradcheck      finite-difference check of the contrastive gradient
//
// Exit codes: 0 success, 1 numerical failure, 2 usage/IO error.
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "poec/checkpoint.hpp"
#include "poec/conv.hpp"
#include "poec/dataio.hpp"
#include "poec/error.hpp"
#include "poec/kernels.hpp"
#include "poec/training.hpp"

namespace {

// Paper-scale architecture defaults; the library itself is shape-generic.
constexpr int kHiddenCapsules = 20;
constexpr int kHiddenDim = 16;
constexpr int kCapsuleDim = 8;

struct Options {
    std::string data, checkpoint, out, config;
    poec::TrainConfig cfg;
    // generate
    bool restricted = false;
    int rows = 4;
    int capsule = -1;
    // gradcheck
    double eps = 1e-6;
};

void add_common_flags(CLI::App* sub, Options& o, bool needs_data) {
    sub->add_option("--config", o.config,
                    "key=value config file ('#' comments); command-line flags "
                    "take precedence, unknown keys are rejected");
    if (needs_data) sub->add_option("--data", o.data, "IDX image file");
    sub->add_option("--seed", o.cfg.seed, "RNG seed");
    sub->add_option("--epochs", o.cfg.epochs, "training epochs");
    sub->add_option("--batch", o.cfg.batch_size, "batch size");
    sub->add_option("--lr", o.cfg.learning_rate, "learning rate");
    sub->add_option("--momentum", o.cfg.momentum, "SGD momentum");
    sub->add_option("--l2", o.cfg.l2, "L2 regularization strength");
    sub->add_option("--decay", o.cfg.lr_decay, "per-epoch learning rate decay");
    sub->add_option("--routing-iters", o.cfg.routing_iters, "routing iterations");
    sub->add_option("--init-std", o.cfg.init_std,
                    "stddev of the Gaussian weight initialization");
    sub->add_option("--threads", o.cfg.threads,
                    "worker threads (0 = auto); results do not depend on it");
}

// Applies a flat key=value config file to a parsed subcommand.  Keys name
// long options without the leading dashes; values already given on the
// command line keep their parsed value.
void apply_config_file(CLI::App* sub, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw poec::IoError("cannot open config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto begin = line.find_first_not_of(" \t\r");
        if (begin == std::string::npos) continue;
        const auto end = line.find_last_not_of(" \t\r");
        line = line.substr(begin, end - begin + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw poec::IoError(path + ":" + std::to_string(lineno) +
                                ": expected key=value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t");
            const auto e = s.find_last_not_of(" \t");
            return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || key == "config")
            throw poec::IoError(path + ":" + std::to_string(lineno) + ": bad key");
        CLI::Option* opt = sub->get_option_no_throw("--" + key);
        if (!opt)
            throw poec::IoError(path + ":" + std::to_string(lineno) +
                                ": unknown key '" + key + "'");
        if (opt->count() > 0) continue;  // the command line wins
        opt->add_result(value);
        opt->run_callback();
    }
}

void maybe_apply_config(CLI::App* sub, Options& o) {
    if (!o.config.empty()) apply_config_file(sub, o.config);
}

// Required-path validation runs after the config merge so paths may come
// from either source.
void require_path(const std::string& value, const char* flag) {
    if (value.empty())
        throw poec::IoError(std::string(flag) + " is required (flag or config file)");
}

std::vector<poec::CapsuleLayer> encode_dataset(const poec::IdxDataset& ds,
                                               const poec::ConvStack& stack) {
    std::vector<poec::CapsuleLayer> out;
    out.reserve(ds.images.size());
    for (const poec::Image& img : ds.images)
        out.push_back(poec::volume_to_capsules(poec::encode(img, stack), kCapsuleDim));
    return out;
}

poec::Checkpoint load_required(const std::string& path, bool conv, bool encoder,
                               bool decoder) {
    poec::Checkpoint ckpt = poec::load_checkpoint(path);
    if (conv && !ckpt.conv)
        throw poec::IoError(path + ": checkpoint has no conv section (run train-conv)");
    if (encoder && !ckpt.encoder_w)
        throw poec::IoError(path + ": checkpoint has no encoder (run train-caps)");
    if (decoder && !ckpt.decoder_u)
        throw poec::IoError(path + ": checkpoint has no decoder (run train-decoder)");
    return ckpt;
}

int cmd_train_conv(const Options& o) {
    require_path(o.data, "--data");
    require_path(o.out, "--out");
    const poec::IdxDataset ds = poec::load_idx_images(o.data);
    std::printf("train-conv: %d images %dx%d, %d epochs\n", ds.count, ds.rows, ds.cols,
                o.cfg.epochs);
    poec::ConvStack stack = poec::train_autoencoder(
        ds.images, o.cfg, poec::ConvArch{}, [&](int epoch, double mse) {
            std::printf("epoch %d/%d mse %.6f\n", epoch + 1, o.cfg.epochs, mse);
            std::fflush(stdout);
        });
    poec::Checkpoint ckpt;
    ckpt.conv = std::move(stack);
    ckpt.config = o.cfg;
    poec::save_checkpoint(ckpt, o.out);
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
}

int cmd_train_caps(const Options& o) {
    require_path(o.data, "--data");
    require_path(o.checkpoint, "--checkpoint");
    require_path(o.out, "--out");
    poec::Checkpoint ckpt = load_required(o.checkpoint, true, false, false);
    const poec::IdxDataset ds = poec::load_idx_images(o.data);
    const auto data = encode_dataset(ds, *ckpt.conv);
    std::printf("train-caps: %zu samples, %d capsules dim %d -> %d capsules dim %d\n",
                data.size(), data[0].count, data[0].dim, kHiddenCapsules, kHiddenDim);
    poec::EncoderTrainResult res = poec::train_encoder(
        data, kHiddenCapsules, kHiddenDim, o.cfg, [&](int epoch, double act) {
            std::printf("epoch %d/%d mean activation %.6f\n", epoch + 1, o.cfg.epochs, act);
            std::fflush(stdout);
        });
    ckpt.encoder_w = std::move(res.model.w);
    ckpt.stats = std::move(res.stats);
    ckpt.config = o.cfg;
    poec::save_checkpoint(ckpt, o.out);
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
}

int cmd_train_decoder(const Options& o) {
    require_path(o.data, "--data");
    require_path(o.checkpoint, "--checkpoint");
    require_path(o.out, "--out");
    poec::Checkpoint ckpt = load_required(o.checkpoint, true, true, false);
    const poec::IdxDataset ds = poec::load_idx_images(o.data);
    const auto data = encode_dataset(ds, *ckpt.conv);
    const poec::EncoderModel encoder{*ckpt.encoder_w};
    std::printf("train-decoder: %zu samples\n", data.size());
    poec::DecoderModel dec = poec::train_decoder(
        data, encoder, o.cfg, [&](int epoch, double err) {
            std::printf("epoch %d/%d mean angle error %.6f\n", epoch + 1, o.cfg.epochs, err);
            std::fflush(stdout);
        });
    ckpt.decoder_u = std::move(dec.u);
    ckpt.config = o.cfg;
    poec::save_checkpoint(ckpt, o.out);
    std::printf("wrote %s\n", o.out.c_str());
    return 0;
}

int cmd_generate(const Options& o) {
    require_path(o.checkpoint, "--checkpoint");
    require_path(o.out, "--out");
    poec::Checkpoint ckpt = load_required(o.checkpoint, true, false, true);
    poec::set_max_threads(o.cfg.threads);
    const poec::ConvStack& stack = *ckpt.conv;
    const poec::DecoderModel dec{*ckpt.decoder_u};
    poec::OrientationStats stats;
    if (ckpt.stats) stats = *ckpt.stats;
    if (o.restricted && !ckpt.stats)
        throw poec::DomainError("--restricted needs orientation stats in the checkpoint");

    const int n_hidden = dec.u.n_in;
    if (o.rows < 1) throw poec::DomainError("--rows must be >= 1");
    if (o.capsule >= n_hidden)
        throw poec::DomainError("--capsule out of range (model has " +
                                std::to_string(n_hidden) + " capsules)");
    std::vector<int> columns;
    if (o.capsule >= 0)
        columns.push_back(o.capsule);
    else
        for (int j = 0; j < n_hidden; ++j) columns.push_back(j);

    poec::Rng rng(o.cfg.seed);
    std::vector<poec::Image> tiles;
    tiles.reserve(static_cast<size_t>(o.rows) * columns.size());
    for (int r = 0; r < o.rows; ++r)
        for (int j : columns) {
            poec::CapsuleLayer caps =
                poec::generate(dec, stats, rng, j, o.restricted, o.cfg.routing_iters);
            poec::FeatureVolume vol = poec::capsules_to_volume(
                caps, stack.h2(), stack.w2(), stack.arch.c2);
            tiles.push_back(poec::decode(vol, stack));
        }
    poec::save_image_grid(tiles, static_cast<int>(columns.size()), o.out);
    std::printf("wrote %s (%d rows x %zu columns)\n", o.out.c_str(), o.rows,
                columns.size());
    return 0;
}

int cmd_gradcheck(const Options& o) {
    poec::set_max_threads(o.cfg.threads);
    poec::Rng rng(o.cfg.seed);
    const int n_in = 6, n_out = 4, d_in = 4, d_out = 4;
    poec::PredictionWeights w =
        poec::PredictionWeights::random(n_in, n_out, d_in, d_out, rng, 0.5);
    poec::CapsuleLayer raw(n_in, d_in);
    for (auto& v : raw.data) v = rng.next_normal();
    const poec::CapsuleLayer x = poec::squash_layer(raw);

    const poec::GradcheckReport rep = poec::gradcheck(w, x, o.eps, o.cfg.routing_iters);
    std::printf("gradcheck: %zu entries, eps %.1e\n", rep.entries, o.eps);
    std::printf("max rel error %.3e at (i=%d, j=%d, row=%d, col=%d)\n",
                rep.max_rel_error, rep.worst_i, rep.worst_j, rep.worst_row,
                rep.worst_col);
    std::printf("  analytic %.12e  numeric %.12e\n", rep.worst_analytic,
                rep.worst_numeric);
    const bool ok = rep.max_rel_error < 1e-5;
    std::printf("%s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"product-of-expert capsule trainer"};
    app.require_subcommand(1);

    Options o_conv, o_caps, o_dec, o_gen, o_grad;

    CLI::App* conv = app.add_subcommand("train-conv", "train the conv autoencoder");
    add_common_flags(conv, o_conv, true);
    conv->add_option("--out", o_conv.out, "output checkpoint");

    CLI::App* caps = app.add_subcommand("train-caps", "train the capsule encoder");
    add_common_flags(caps, o_caps, true);
    caps->add_option("--checkpoint", o_caps.checkpoint, "conv checkpoint");
    caps->add_option("--out", o_caps.out, "output checkpoint");

    CLI::App* dec = app.add_subcommand("train-decoder", "train the capsule decoder");
    add_common_flags(dec, o_dec, true);
    dec->add_option("--checkpoint", o_dec.checkpoint, "encoder checkpoint");
    dec->add_option("--out", o_dec.out, "output checkpoint");

    CLI::App* gen = app.add_subcommand("generate", "sample capsules and decode images");
    add_common_flags(gen, o_gen, false);
    gen->add_option("--checkpoint", o_gen.checkpoint, "full checkpoint");
    gen->add_option("--out", o_gen.out, "output PGM grid");
    gen->add_flag("--restricted", o_gen.restricted,
                  "sample only the orientation hemisphere seen in training");
    gen->add_option("--rows", o_gen.rows, "samples per capsule");
    gen->add_option("--capsule", o_gen.capsule, "emit only this capsule's column");

    CLI::App* grad = app.add_subcommand("gradcheck", "finite-difference gradient check");
    add_common_flags(grad, o_grad, false);
    grad->add_option("--eps", o_grad.eps, "finite-difference step");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (conv->parsed()) {
            maybe_apply_config(conv, o_conv);
            return cmd_train_conv(o_conv);
        }
        if (caps->parsed()) {
            maybe_apply_config(caps, o_caps);
            return cmd_train_caps(o_caps);
        }
        if (dec->parsed()) {
            maybe_apply_config(dec, o_dec);
            return cmd_train_decoder(o_dec);
        }
        if (gen->parsed()) {
            maybe_apply_config(gen, o_gen);
            return cmd_generate(o_gen);
        }
        if (grad->parsed()) {
            maybe_apply_config(grad, o_grad);
            return cmd_gradcheck(o_grad);
        }
    } catch (const poec::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 1;
    } catch (const poec::SingularEnergyError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 1;
    } catch (const poec::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
