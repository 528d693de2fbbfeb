// tact CLI: simulate, preprocess, train, eval, ablate, infer, export-latent,
// import-check. Exit codes: 0 ok, 1 usage, 2 data format, 3 numerical, 4 I/O.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tact/checkpoint.hpp"
#include "tact/dataset.hpp"
#include "tact/errors.hpp"
#include "tact/model.hpp"
#include "tact/sim.hpp"
#include "tact/stream.hpp"
#include "tact/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace tact;

namespace {

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw io_error("cannot create " + path);
    out << text;
    if (!out) throw io_error("short write on " + path);
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    static constexpr char table[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::array<int, 256> rev;
    rev.fill(-1);
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(table[i])] = i;
    std::vector<std::uint8_t> out;
    int acc = 0, bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r') continue;
        const int v = rev[static_cast<unsigned char>(c)];
        if (v < 0) throw format_error("invalid base64 payload");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

data::Splits derive_splits(const data::Manifest& manifest, double train_frac, double val_frac,
                           double test_frac, std::uint64_t split_seed) {
    data::SplitSpec spec;
    spec.train = train_frac;
    spec.val = val_frac;
    spec.test = test_frac;
    spec.rng_seed = split_seed;
    return data::make_splits(manifest, spec);
}

void print_confusion(const train::Confusion& c) {
    std::cout << "confusion matrix (rows = true, cols = predicted):\n";
    std::cout << "      pred0 pred1 pred2 pred3\n";
    for (std::size_t i = 0; i < 4; ++i) {
        std::printf("true%zu", i);
        for (std::size_t j = 0; j < 4; ++j) std::printf(" %5zu", c[i][j]);
        std::printf("\n");
    }
}

std::string fmt_pct(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", x * 100.0);
    return buf;
}

// ------------------------------------------------------------- subcommands

int cmd_simulate(const std::string& material, std::size_t per_class, const std::string& out,
                 const std::string& config_path, std::uint64_t seed, bool verbose) {
    if (per_class == 0) throw usage_error("simulate: --per-class must be >= 1");
    sim::SimConfig cfg = sim::SimConfig::for_material(material);
    if (!config_path.empty()) cfg = sim::SimConfig::from_json(read_text_file(config_path), cfg);
    cfg.rng_seed = seed;
    cfg.validate();

    data::Manifest manifest;
    manifest.material = material;
    std::size_t index = 0;
    for (int label = 0; label < 4; ++label) {
        for (std::size_t i = 0; i < per_class; ++i) {
            const sim::TrialRecord rec =
                sim::synth_trial(label, material, cfg, sim::trial_seed(seed, label, i));
            char id[48];
            std::snprintf(id, sizeof id, "%s_%05zu_l%d", material.c_str(), index, label);
            manifest.entries.push_back(data::save_trial(rec, out, id));
            ++index;
            if (verbose) std::cerr << "wrote trial " << id << "\n";
        }
    }
    manifest.save(out);
    write_text_file(out + "/sim_config.json", cfg.to_json() + "\n");
    std::cout << "simulated " << manifest.entries.size() << " " << material << " trials into "
              << out << "\n";
    return 0;
}

int cmd_preprocess(const std::string& dir, bool verbose) {
    const data::Manifest manifest = data::Manifest::load(dir);
    std::size_t computed = 0, cached = 0;
    for (const auto& entry : manifest.entries) {
        if (data::has_pooled(dir, entry.id)) {
            ++cached;
            continue;
        }
        data::ensure_pooled(dir, entry);
        ++computed;
        if (verbose) std::cerr << "pooled " << entry.id << "\n";
    }
    std::cout << "preprocessed " << computed << " trials (" << cached << " already cached) in "
              << dir << "\n";
    return 0;
}

int cmd_train(const std::string& dir, const std::string& out, const std::string& train_cfg_path,
              const std::string& model_cfg_path, std::uint64_t seed, std::uint64_t split_seed) {
    train::TrainConfig tcfg =
        train_cfg_path.empty() ? train::TrainConfig{} : train::TrainConfig::from_json(
                                                            read_text_file(train_cfg_path));
    tcfg.seed = seed;
    model::ModelConfig mcfg = model_cfg_path.empty()
                                  ? model::ModelConfig{}
                                  : model::ModelConfig::from_json(read_text_file(model_cfg_path));
    const data::Manifest manifest = data::Manifest::load(dir);
    const data::Splits splits = derive_splits(manifest, 0.70, 0.15, 0.15, split_seed);

    fs::create_directories(out);
    write_text_file(out + "/resolved_train_config.json", tcfg.to_json() + "\n");
    write_text_file(out + "/resolved_model_config.json", mcfg.to_json() + "\n");
    {
        ordered_json sj;
        sj["split_seed"] = split_seed;
        sj["train"] = splits.train;
        sj["val"] = splits.val;
        sj["test"] = splits.test;
        write_text_file(out + "/resolved_splits.json", sj.dump(2) + "\n");
    }

    const train::RunReport rep = train::train(mcfg, tcfg, dir, splits, out);
    std::cout << "best val accuracy " << fmt_pct(rep.best_val_accuracy) << " at epoch "
              << rep.best_epoch << " (" << rep.epochs.size() << " epochs run)\n";
    std::cout << "test accuracy " << fmt_pct(rep.test_accuracy) << "\n";
    print_confusion(rep.confusion);
    std::cout << "checkpoint: " << rep.checkpoint_path << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dir, const std::string& split,
             const std::string& out, std::uint64_t split_seed) {
    if (split != "train" && split != "val" && split != "test")
        throw usage_error("eval: --split must be train, val, or test");
    model::Model<float> m = model::load_checkpoint(ckpt);
    const data::Manifest manifest = data::Manifest::load(dir);
    const data::Splits splits = derive_splits(manifest, 0.70, 0.15, 0.15, split_seed);
    const std::vector<std::string>& ids =
        split == "train" ? splits.train : (split == "val" ? splits.val : splits.test);
    const train::TrialSet set = train::load_split(dir, manifest, ids, m.config.input_mask);
    const train::EvalResult res = train::evaluate(m, set);

    std::cout << split << " accuracy " << fmt_pct(res.accuracy) << " over " << ids.size()
              << " trials\n";
    print_confusion(res.confusion);

    if (!out.empty()) {
        fs::create_directories(out);
        ordered_json j;
        j["checkpoint"] = ckpt;
        j["split"] = split;
        j["split_seed"] = split_seed;
        j["accuracy"] = res.accuracy;
        j["confusion"] = res.confusion;
        j["ids"] = ids;
        j["predicted"] = res.predicted;
        write_text_file(out + "/eval_report.json", j.dump(2) + "\n");
        std::ostringstream lat;
        lat << "id,label";
        for (std::size_t i = 0; i < m.config.d_model; ++i) lat << ",z" << i;
        lat << "\n";
        for (std::size_t r = 0; r < ids.size(); ++r) {
            lat << ids[r] << ',' << set.items[r].label;
            char buf[32];
            for (float v : res.latents[r]) {
                std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
                lat << ',' << buf;
            }
            lat << "\n";
        }
        write_text_file(out + "/latents.csv", lat.str());
        std::cout << "wrote " << out << "/eval_report.json and latents.csv\n";
    }
    return 0;
}

int cmd_ablate(const std::string& dir, const std::string& grid_path, const std::string& out,
               std::uint64_t seed, std::uint64_t split_seed, const std::string& train_cfg_path,
               const std::string& model_cfg_path) {
    json grid_json;
    try {
        grid_json = json::parse(read_text_file(grid_path));
    } catch (const json::exception& e) {
        throw format_error(grid_path + ": invalid grid JSON: " + e.what());
    }
    std::vector<train::AblationSpec> grid;
    try {
        for (const auto& row : grid_json) {
            train::AblationSpec spec;
            spec.name = row.at("name");
            if (row.contains("backbone")) spec.backbone = model::backbone_from_string(row["backbone"]);
            if (row.contains("classifier"))
                spec.classifier = model::classifier_from_string(row["classifier"]);
            if (row.contains("mask")) {
                const auto& mk = row["mask"];
                if (mk.contains("s1_flow")) spec.mask.s1_flow = mk["s1_flow"];
                if (mk.contains("s2_flow")) spec.mask.s2_flow = mk["s2_flow"];
                if (mk.contains("flow_angles")) spec.mask.flow_angles = mk["flow_angles"];
                if (mk.contains("wrench")) spec.mask.wrench = mk["wrench"];
                if (mk.contains("joints")) spec.mask.joints = mk["joints"];
            }
            grid.push_back(std::move(spec));
        }
    } catch (const json::exception& e) {
        throw format_error(grid_path + ": bad grid row: " + e.what());
    }
    if (grid.empty()) throw format_error(grid_path + ": grid lists no rows");

    train::TrainConfig tcfg =
        train_cfg_path.empty() ? train::TrainConfig{} : train::TrainConfig::from_json(
                                                            read_text_file(train_cfg_path));
    tcfg.seed = seed;
    model::ModelConfig mcfg = model_cfg_path.empty()
                                  ? model::ModelConfig{}
                                  : model::ModelConfig::from_json(read_text_file(model_cfg_path));
    const data::Manifest manifest = data::Manifest::load(dir);
    const data::Splits splits = derive_splits(manifest, 0.70, 0.15, 0.15, split_seed);

    const auto rows = train::ablate(grid, mcfg, tcfg, dir, splits, out);
    std::cout << "name, backbone, classifier, accuracy\n";
    for (const auto& r : rows) {
        if (r.error.empty())
            std::cout << r.spec.name << ", " << model::to_string(r.spec.backbone) << ", "
                      << model::to_string(r.spec.classifier) << ", " << fmt_pct(r.test_accuracy)
                      << "\n";
        else
            std::cout << r.spec.name << ", FAILED: " << r.error << "\n";
    }
    std::cout << "table: " << out << "/ablation.csv\n";
    return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& source, std::size_t window,
              std::size_t emit_every, const std::string& out_path) {
    model::Model<float> m = model::load_checkpoint(ckpt);
    if (window == 0) window = m.config.sequence_length;
    stream::StreamClassifier sc(std::move(m), window, emit_every);

    std::ofstream out_file;
    if (!out_path.empty()) {
        out_file.open(out_path, std::ios::trunc);
        if (!out_file) throw io_error("cannot create " + out_path);
    }
    std::vector<double> latencies;
    std::size_t emissions = 0;

    auto emit = [&](const stream::Emission& e) {
        ordered_json j;
        j["t"] = e.stream_time;
        j["tick"] = e.tick_index;
        if (e.warming_up) {
            j["status"] = "warming_up";
        } else {
            j["status"] = "ok";
            j["probs"] = e.probs;
            j["predicted"] = e.predicted;
            latencies.push_back(e.latency_ms);
        }
        const std::string line = j.dump();
        std::cout << line << "\n";
        if (out_file) out_file << line << "\n";
        ++emissions;
    };

    if (source == "-") {
        // newline-delimited JSON feed on stdin
        std::string line;
        while (std::getline(std::cin, line)) {
            if (line.empty()) continue;
            json j;
            try {
                j = json::parse(line);
            } catch (const json::exception& e) {
                throw format_error(std::string("stream line is not JSON: ") + e.what());
            }
            stream::StreamTick tick;
            try {
                tick.t = j.at("t");
                const std::size_t h = j.at("h"), w = j.at("w");
                auto decode_frame = [&](const std::string& key) {
                    const std::vector<std::uint8_t> bytes =
                        base64_decode(j.at(key).get<std::string>());
                    if (bytes.size() != h * w)
                        throw format_error("frame payload size mismatch on '" + key + "'");
                    flow::Frame f(h, w);
                    for (std::size_t i = 0; i < bytes.size(); ++i)
                        f.intensity[i] = static_cast<float>(bytes[i]) / 255.f;
                    return f;
                };
                if (j.contains("s1_b64")) tick.s1 = decode_frame("s1_b64");
                if (j.contains("s2_b64")) tick.s2 = decode_frame("s2_b64");
                if (j.contains("wrench"))
                    for (std::size_t i = 0; i < 6; ++i) tick.wrench[i] = j["wrench"].at(i);
                if (j.contains("joints"))
                    for (std::size_t i = 0; i < 4; ++i) tick.joints[i] = j["joints"].at(i);
            } catch (const json::exception& e) {
                throw format_error(std::string("bad stream tick: ") + e.what());
            }
            if (auto e = sc.push(tick)) emit(*e);
        }
    } else {
        // replay a saved trial sidecar
        const fs::path sidecar(source);
        if (!fs::exists(sidecar)) throw io_error("stream source not found: " + source);
        const fs::path dataset_dir = sidecar.parent_path().parent_path();
        data::ManifestEntry entry;
        entry.id = sidecar.stem().string();
        entry.path = "trials/" + sidecar.filename().string();
        const sim::TrialRecord rec = data::load_trial(dataset_dir.string(), entry);
        for (std::size_t k = 0; k < rec.frames_s1.size(); ++k) {
            stream::StreamTick tick;
            tick.t = static_cast<double>(k) / rec.sample_rate_hz;
            tick.s1 = rec.frames_s1[k];
            tick.s2 = rec.frames_s2[k];
            tick.wrench = rec.wrench[k];
            tick.joints = rec.joints[k];
            if (auto e = sc.push(tick)) emit(*e);
        }
    }

    if (!latencies.empty()) {
        double worst = 0, sum = 0;
        for (double v : latencies) {
            worst = std::max(worst, v);
            sum += v;
        }
        std::cerr << "emissions: " << emissions << ", classified: " << latencies.size()
                  << ", mean latency " << sum / latencies.size() << " ms, worst " << worst
                  << " ms\n";
    } else {
        std::cerr << "emissions: " << emissions << " (no classifications; stream shorter than "
                  << "the warmup window)\n";
    }
    return 0;
}

int cmd_export_latent(const std::string& ckpt, const std::string& dir, const std::string& split,
                      const std::string& out_file, std::uint64_t split_seed) {
    model::Model<float> m = model::load_checkpoint(ckpt);
    const data::Manifest manifest = data::Manifest::load(dir);
    const data::Splits splits = derive_splits(manifest, 0.70, 0.15, 0.15, split_seed);
    const std::vector<std::string>& ids =
        split == "train" ? splits.train : (split == "val" ? splits.val : splits.test);
    const train::TrialSet set = train::load_split(dir, manifest, ids, m.config.input_mask);

    std::ostringstream os;
    os << "id,label";
    for (std::size_t i = 0; i < m.config.d_model; ++i) os << ",z" << i;
    os << "\n";
    nn::StepContext ctx;
    for (std::size_t r = 0; r < set.items.size(); ++r) {
        const auto in = model::SeqInput<float>::from(set.items[r]);
        const auto out = m.forward(in, ctx);
        os << ids[r] << ',' << set.items[r].label;
        char buf[32];
        for (float v : out.latent.data) {
            std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
            os << ',' << buf;
        }
        os << "\n";
    }
    write_text_file(out_file, os.str());
    std::cout << "wrote " << set.items.size() << " latent vectors to " << out_file << "\n";
    return 0;
}

int cmd_import_check(const std::string& dir) {
    const data::ImportReport rep = data::validate_import(dir);
    if (rep.ok) {
        std::cout << "import check passed: " << rep.trials_checked << " trials verified\n";
        return 0;
    }
    std::cout << "import check found " << rep.problems.size() << " problem(s):\n";
    for (const auto& p : rep.problems) std::cout << "  - " << p << "\n";
    return static_cast<int>(exit_code::format);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thin-material layer classification pipeline"};
    app.require_subcommand(1);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic labeled dataset");
    std::string sim_material = "cloth", sim_out, sim_config;
    std::size_t sim_per_class = 92;
    std::uint64_t sim_seed = 0;
    bool sim_verbose = false;
    simulate->add_option("--material", sim_material, "cloth or paper")
        ->check(CLI::IsMember({"cloth", "paper"}));
    simulate->add_option("--per-class", sim_per_class, "trials per class");
    simulate->add_option("--out", sim_out, "output dataset directory")->required();
    simulate->add_option("--config", sim_config, "sim config JSON (overrides the profile)");
    simulate->add_option("--seed", sim_seed, "master seed");
    simulate->add_flag("-v,--verbose", sim_verbose);

    // preprocess
    auto* preprocess = app.add_subcommand("preprocess", "build the pooled-flow cache");
    std::string pre_dir;
    bool pre_verbose = false;
    preprocess->add_option("dir", pre_dir, "dataset directory")->required();
    preprocess->add_flag("-v,--verbose", pre_verbose);

    // train
    auto* train_cmd = app.add_subcommand("train", "train a classifier on a dataset");
    std::string tr_dir, tr_out = "train_out", tr_cfg, tr_model_cfg;
    std::uint64_t tr_seed = 0, tr_split_seed = 0;
    train_cmd->add_option("dir", tr_dir, "dataset directory")->required();
    train_cmd->add_option("--out", tr_out, "output directory");
    train_cmd->add_option("--config", tr_cfg, "train config JSON");
    train_cmd->add_option("--model-config", tr_model_cfg, "model config JSON");
    train_cmd->add_option("--seed", tr_seed, "training seed");
    train_cmd->add_option("--split-seed", tr_split_seed, "split seed");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string ev_ckpt, ev_dir, ev_split = "test", ev_out;
    std::uint64_t ev_split_seed = 0;
    eval_cmd->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
    eval_cmd->add_option("dir", ev_dir, "dataset directory")->required();
    eval_cmd->add_option("--split", ev_split, "train|val|test");
    eval_cmd->add_option("--out", ev_out, "output directory for reports");
    eval_cmd->add_option("--split-seed", ev_split_seed, "split seed");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
    std::string ab_dir, ab_grid, ab_out = "ablate_out", ab_cfg, ab_model_cfg;
    std::uint64_t ab_seed = 0, ab_split_seed = 0;
    ablate_cmd->add_option("--grid", ab_grid, "grid JSON file")->required();
    ablate_cmd->add_option("dir", ab_dir, "dataset directory")->required();
    ablate_cmd->add_option("--out", ab_out, "output directory");
    ablate_cmd->add_option("--config", ab_cfg, "train config JSON");
    ablate_cmd->add_option("--model-config", ab_model_cfg, "model config JSON");
    ablate_cmd->add_option("--seed", ab_seed, "training seed");
    ablate_cmd->add_option("--split-seed", ab_split_seed, "split seed");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "streaming classification");
    std::string in_ckpt, in_stream, in_out;
    std::size_t in_window = 0, in_emit_every = 3;
    infer_cmd->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
    infer_cmd->add_option("--stream", in_stream,
                          "trial sidecar JSON to replay, or '-' for JSONL on stdin")
        ->required();
    infer_cmd->add_option("--window", in_window, "window length (default: model sequence length)");
    infer_cmd->add_option("--emit-every", in_emit_every, "classify every k input ticks");
    infer_cmd->add_option("--out", in_out, "also write emissions to this JSONL file");

    // export-latent
    auto* latent_cmd = app.add_subcommand("export-latent", "export latent vectors as CSV");
    std::string la_ckpt, la_dir, la_split = "test", la_out = "latents.csv";
    std::uint64_t la_split_seed = 0;
    latent_cmd->add_option("--ckpt", la_ckpt, "checkpoint path")->required();
    latent_cmd->add_option("dir", la_dir, "dataset directory")->required();
    latent_cmd->add_option("--split", la_split, "train|val|test")
        ->check(CLI::IsMember({"train", "val", "test"}));
    latent_cmd->add_option("--out", la_out, "output CSV path");
    latent_cmd->add_option("--split-seed", la_split_seed, "split seed");

    // import-check
    auto* import_cmd = app.add_subcommand("import-check",
                                          "validate an external dataset directory");
    std::string im_dir;
    import_cmd->add_option("dir", im_dir, "directory to validate")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : static_cast<int>(exit_code::usage);
    }

    try {
        if (*simulate)
            return cmd_simulate(sim_material, sim_per_class, sim_out, sim_config, sim_seed,
                                sim_verbose);
        if (*preprocess) return cmd_preprocess(pre_dir, pre_verbose);
        if (*train_cmd)
            return cmd_train(tr_dir, tr_out, tr_cfg, tr_model_cfg, tr_seed, tr_split_seed);
        if (*eval_cmd) return cmd_eval(ev_ckpt, ev_dir, ev_split, ev_out, ev_split_seed);
        if (*ablate_cmd)
            return cmd_ablate(ab_dir, ab_grid, ab_out, ab_seed, ab_split_seed, ab_cfg,
                              ab_model_cfg);
        if (*infer_cmd) return cmd_infer(in_ckpt, in_stream, in_window, in_emit_every, in_out);
        if (*latent_cmd)
            return cmd_export_latent(la_ckpt, la_dir, la_split, la_out, la_split_seed);
        if (*import_cmd) return cmd_import_check(im_dir);
    } catch (const usage_error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return static_cast<int>(exit_code::usage);
    } catch (const numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return static_cast<int>(exit_code::numeric);
    } catch (const format_error& e) {
        std::cerr << "data format error: " << e.what() << "\n";
        return static_cast<int>(exit_code::format);
    } catch (const io_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return static_cast<int>(exit_code::io);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(exit_code::usage);
    }
    return 0;
}
