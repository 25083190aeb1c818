// wstereo: command-line surface for the wavelet-stereo library.
//
// Subcommands: dwt, synth, train-toy, infer, eval, gradcheck. Every command
// is a pure function of (flags, input files, seed) and emits a run manifest
// next to its outputs, so repeated runs are byte-identical.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "wstereo/config.hpp"
#include "wstereo/freqeval.hpp"
#include "wstereo/pipeline.hpp"
#include "wstereo/stereo_io.hpp"
#include "wstereo/synth.hpp"
#include "wstereo/wavelet.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace ws;

namespace {

constexpr const char* kVersion = "1.0.0";

// Stable content hash for the manifest (FNV-1a 64).
std::string fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

class Manifest {
public:
    Manifest(std::string command) { j_["command"] = std::move(command); }
    void set_config(const json& cfg) { j_["config_hash"] = fnv1a(cfg.dump()); }
    void set_seed(std::uint64_t s) { j_["seed"] = s; }
    // Basenames only: the manifest sits next to its inputs' consumers and
    // outputs, and embedding directories would make otherwise identical runs
    // into different bytes.
    void add_input(const std::string& p) { j_["inputs"].push_back(fs::path(p).filename().string()); }
    void add_output(const std::string& p) {
        j_["outputs"].push_back(fs::path(p).filename().string());
    }
    void stage_seconds(const std::string& name, double s) {
        // Rounded away: wall-clock varies run to run, and the manifest must be
        // byte-identical across repeats. The measured value goes to stderr.
        std::fprintf(stderr, "[%s] %.3f s\n", name.c_str(), s);
        j_["stages"].push_back(name);
    }
    void write(const std::string& path) {
        j_["version"] = kVersion;
        if (!j_.contains("inputs")) j_["inputs"] = json::array();
        if (!j_.contains("outputs")) j_["outputs"] = json::array();
        if (!j_.contains("stages")) j_["stages"] = json::array();
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        os << j_.dump(2) << "\n";
        if (!os) throw FormatError("cannot write manifest: " + path);
    }

private:
    json j_;
};

class StageTimer {
public:
    StageTimer(Manifest& m, std::string name)
        : m_(m), name_(std::move(name)), t0_(std::chrono::steady_clock::now()) {}
    ~StageTimer() {
        m_.stage_seconds(
            name_, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count());
    }

private:
    Manifest& m_;
    std::string name_;
    std::chrono::steady_clock::time_point t0_;
};

json load_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("cannot open: " + path);
    try {
        json j;
        is >> j;
        return j;
    } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
    }
}

DisparityMap read_disparity(const std::string& path) {
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".png") return read_png16(path);
    return read_pfm(path);
}

DisparityMap to_map(const Tensor<float>& d) { // [1,1,H,W] -> all-valid [H,W]
    const int H = d.dim(2), W = d.dim(3);
    DisparityMap m = make_disparity(H, W);
    m.values = Tensor<float>({H, W}, d.data());
    return m;
}

Tensor<float> gray(const Tensor<float>& img) {
    if (img.dim(1) == 1) return img;
    const int H = img.dim(2), W = img.dim(3);
    Tensor<float> out = Tensor<float>::zeros({1, 1, H, W});
    for (long i = 0; i < static_cast<long>(H) * W; ++i)
        out.mutable_data()[i] =
            std::round(0.299f * img.data()[i] + 0.587f * img.data()[H * static_cast<long>(W) + i] +
                       0.114f * img.data()[2L * H * W + i]);
    return out;
}

// Reflect-pad (edge not repeated) on the bottom/right to multiples of `mult`.
Tensor<float> reflect_pad(const Tensor<float>& img, int mult) {
    const int C = img.dim(1), H = img.dim(2), W = img.dim(3);
    const int Hp = (H + mult - 1) / mult * mult, Wp = (W + mult - 1) / mult * mult;
    if (Hp == H && Wp == W) return img;
    if (Hp - H >= H || Wp - W >= W)
        throw DimensionError("image too small to reflect-pad to a multiple of " +
                             std::to_string(mult));
    Tensor<float> out = Tensor<float>::zeros({1, C, Hp, Wp});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < Hp; ++y)
            for (int x = 0; x < Wp; ++x) {
                const int sy = y < H ? y : 2 * H - 2 - y;
                const int sx = x < W ? x : 2 * W - 2 - x;
                out.mutable_data()[(static_cast<long>(c) * Hp + y) * Wp + x] =
                    img.at4(0, c, sy, sx);
            }
    return out;
}

struct SampleDir {
    std::string left, right, gt;
};

// --data accepts either a single sample directory (left.ppm/right.ppm/gt.pfm)
// or a directory of such sample directories.
std::vector<SampleDir> find_samples(const std::string& root) {
    auto is_sample = [](const fs::path& d) { return fs::exists(d / "left.ppm"); };
    std::vector<SampleDir> out;
    auto push = [&](const fs::path& d) {
        out.push_back({(d / "left.ppm").string(), (d / "right.ppm").string(),
                       (d / "gt.pfm").string()});
    };
    if (!fs::is_directory(root)) throw FormatError("--data must be a directory: " + root);
    if (is_sample(root)) {
        push(root);
        return out;
    }
    std::vector<fs::path> dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && is_sample(e.path())) dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) push(d);
    if (out.empty()) throw FormatError("no samples (left.ppm) under " + root);
    return out;
}

TrainSample<float> load_sample(const SampleDir& s) {
    TrainSample<float> t;
    t.left = read_pnm(s.left);
    t.right = read_pnm(s.right);
    DisparityMap gt = read_disparity(s.gt);
    const int H = gt.height(), W = gt.width();
    t.gt = Tensor<float>({1, 1, H, W}, gt.values.data());
    t.valid = Tensor<float>({1, 1, H, W}, gt.valid.data());
    return t;
}

// ---- commands ----

int cmd_dwt(const std::string& input, int levels, const std::string& out_dir, bool verify,
            const std::string& pad) {
    Manifest man("dwt");
    man.add_input(input);
    man.set_seed(0);
    man.set_config(json{{"levels", levels}, {"pad", pad}});
    fs::create_directories(out_dir);

    Tensor<float> img = read_pnm(input);
    if (pad == "reflect") img = reflect_pad(img, 1 << levels);
    if (img.dim(1) == 3) img = gray(img);

    WaveletPyramid<float> pyr;
    {
        StageTimer st(man, "decompose");
        pyr = build_pyramid(img, levels);
    }
    const std::string stem = fs::path(input).stem().string();
    for (int i = 1; i <= levels; ++i) {
        const auto& sb = pyr.levels[i - 1];
        const std::pair<const char*, const Tensor<float>*> bands[] = {
            {"ll", &sb.ll}, {"lh", &sb.lh}, {"hl", &sb.hl}, {"hh", &sb.hh}};
        for (const auto& [name, t] : bands) {
            const std::string path =
                (fs::path(out_dir) / (stem + ".l" + std::to_string(i) + "." + name + ".pfm"))
                    .string();
            write_pfm(path, to_map(*t));
            man.add_output(path);
        }
    }
    if (verify) {
        Tensor<float> rec = pyr.levels[levels - 1].ll;
        for (int i = levels; i >= 1; --i) {
            const auto& sb = pyr.levels[i - 1];
            rec = idwt2(rec, sb.lh, sb.hl, sb.hh);
        }
        float max_err = 0;
        for (long i = 0; i < img.numel(); ++i)
            max_err = std::max(max_err, std::abs(rec.data()[i] - img.data()[i]));
        std::printf("max-abs-err %.3e\n", max_err);
        if (!(max_err < 1e-4f)) throw NumericalError("reconstruction error above 1e-4");
    }
    man.write((fs::path(out_dir) / "manifest.json").string());
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir) {
    Manifest man("synth");
    man.add_input(spec_path);
    SynthSpec spec = SynthSpec::from_json(load_json(spec_path));
    man.set_seed(spec.seed);
    man.set_config(spec.to_json());
    fs::create_directories(out_dir);

    SynthPair pair;
    {
        StageTimer st(man, "synthesize");
        pair = synth_pair(spec);
    }
    const fs::path out(out_dir);
    write_pnm((out / "left.ppm").string(), pair.left);
    write_pnm((out / "right.ppm").string(), pair.right);
    write_pfm((out / "gt.pfm").string(), pair.gt);
    {
        std::ofstream os(out / "spec.json", std::ios::binary | std::ios::trunc);
        os << spec.to_json().dump(2) << "\n";
    }
    for (const char* f : {"left.ppm", "right.ppm", "gt.pfm", "spec.json"})
        man.add_output((out / f).string());
    man.write((out / "manifest.json").string());
    return 0;
}

int cmd_train_toy(const std::string& config_path, const std::string& data_dir,
                  const std::string& out_path) {
    Manifest man("train-toy");
    ModelConfig cfg =
        config_path.empty() ? ModelConfig{} : ModelConfig::from_file(config_path);
    cfg.validate();
    if (!config_path.empty()) man.add_input(config_path);
    man.add_input(data_dir);
    man.set_seed(cfg.seed);
    man.set_config(cfg.to_json());

    std::vector<TrainSample<float>> samples;
    for (const auto& s : find_samples(data_dir)) samples.push_back(load_sample(s));

    ParameterStore<float> ps;
    init_model(ps, cfg);
    std::vector<double> curve;
    {
        StageTimer st(man, "train");
        curve = train_toy(samples, ps, cfg);
    }
    ps.save(out_path);
    man.add_output(out_path);

    const std::string csv_path = out_path + ".loss.csv";
    std::string csv = "step,loss\n";
    char line[64];
    for (size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(line, sizeof(line), "%zu,%.6f\n", i + 1, curve[i]);
        csv += line;
    }
    std::ofstream os(csv_path, std::ios::binary | std::ios::trunc);
    os << csv;
    man.add_output(csv_path);
    man.write(out_path + ".manifest.json");
    return 0;
}

int cmd_infer(const std::string& weights, const std::string& left_path,
              const std::string& right_path, int iters, const std::string& out_dir,
              const std::string& config_path, bool gru_baseline) {
    Manifest man("infer");
    ModelConfig cfg =
        config_path.empty() ? ModelConfig{} : ModelConfig::from_file(config_path);
    cfg.validate();
    for (const auto& p : {weights, left_path, right_path}) man.add_input(p);
    if (!config_path.empty()) man.add_input(config_path);
    man.set_seed(cfg.seed);
    man.set_config(cfg.to_json());
    if (iters < 1) throw ConfigError("--iters must be positive");
    fs::create_directories(out_dir);

    ParameterStore<float> ps = ParameterStore<float>::load(weights);
    Tensor<float> left = read_pnm(left_path);
    Tensor<float> right = read_pnm(right_path);

    InferenceResult<float> res;
    {
        StageTimer st(man, "forward");
        res = gru_baseline ? forward_gru_baseline(left, right, ps, cfg, iters)
                           : forward(left, right, ps, cfg, iters);
    }
    const fs::path out(out_dir);
    for (int k = 1; k <= iters; ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "d_%02d.pfm", k);
        const std::string path = (out / name).string();
        write_pfm(path, to_map(res.disparities[k - 1]));
        man.add_output(path);
    }
    write_pfm((out / "final.pfm").string(), to_map(res.disparities.back()));
    man.add_output((out / "final.pfm").string());
    man.write((out / "manifest.json").string());
    return 0;
}

int cmd_eval(const std::string& pred_path, const std::string& gt_path,
             const std::string& ref_image, const std::string& out_path,
             const std::string& trace_path) {
    Manifest man("eval");
    for (const auto& p : {pred_path, gt_path, ref_image}) man.add_input(p);
    man.set_seed(0);
    man.set_config(json::object());

    DisparityMap gt = read_disparity(gt_path);
    FrequencyMask fmask = canny(read_pnm(ref_image));
    if (fmask.mask.shape() != gt.values.shape())
        throw DimensionError("eval: reference image and gt sizes differ");

    // --pred is either a single disparity file or an infer output directory
    // holding one d_XX.pfm per iteration.
    std::vector<Tensor<float>> preds;
    if (fs::is_directory(pred_path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(pred_path)) {
            const std::string n = e.path().filename().string();
            if (n.rfind("d_", 0) == 0 && n.size() >= 4 &&
                n.substr(n.size() - 4) == ".pfm")
                files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        if (files.empty()) throw FormatError("no d_XX.pfm files in " + pred_path);
        for (const auto& f : files) preds.push_back(read_disparity(f.string()).values);
    } else {
        preds.push_back(read_disparity(pred_path).values);
    }
    for (const auto& p : preds)
        if (p.shape() != gt.values.shape())
            throw DimensionError("eval: pred and gt sizes differ");

    FrequencyMetrics metrics;
    std::string trace;
    {
        StageTimer st(man, "metrics");
        metrics = epe_split(preds.back(), gt.values, fmask, gt.valid);
        trace = convergence_trace_csv(preds, gt.values, fmask, gt.valid);
    }
    {
        std::ofstream os(out_path, std::ios::binary | std::ios::trunc);
        os << metrics.to_json().dump(2) << "\n";
        if (!os) throw FormatError("cannot write " + out_path);
    }
    man.add_output(out_path);
    if (!trace_path.empty()) {
        std::ofstream os(trace_path, std::ios::binary | std::ios::trunc);
        os << trace;
        man.add_output(trace_path);
    }
    man.write(out_path + ".manifest.json");
    return 0;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, int stride) {
    // Gradient audit on a reduced double-precision model: analytic gradients
    // against central finite differences on a random 16x32 pair.
    ModelConfig cfg;
    if (!config_path.empty()) cfg = ModelConfig::from_file(config_path);
    cfg.seed = seed;
    cfg.ef_channels = std::min(cfg.ef_channels, 4);
    cfg.ctx_channels = std::min(cfg.ctx_channels, 4);
    cfg.motion_channels = std::min(cfg.motion_channels, 4);
    cfg.pyramid_levels = std::min(cfg.pyramid_levels, 2);
    cfg.lookup_radius = std::min(cfg.lookup_radius, 2);
    cfg.n_j = std::min(cfg.n_j, 2);
    cfg.validate();

    ParameterStore<double> ps;
    init_model(ps, cfg);
    Rng rng(seed);
    for (auto& v : ps.get("dec.c2.w").impl()->data) v = rng.uniform(-0.1, 0.1);
    // Biases start at zero, which parks every ReLU pre-activation exactly on
    // its kink and breaks finite differences; move them off it.
    for (size_t i = 0; i < ps.size(); ++i)
        if (ps.names()[i].back() == 'b')
            for (auto& v : ps.at(i).impl()->data) v = rng.uniform(-0.05, 0.05);
    auto left = Tensor<double>::zeros({1, 3, 16, 32});
    auto right = Tensor<double>::zeros({1, 3, 16, 32});
    auto gt = Tensor<double>::zeros({1, 1, 16, 32});
    for (auto& v : left.mutable_data()) v = rng.uniform(0, 255);
    for (auto& v : right.mutable_data()) v = rng.uniform(0, 255);
    for (auto& v : gt.mutable_data()) v = rng.uniform(0, 4);

    auto loss_fn = [&] {
        auto res = forward(left, right, ps, cfg, 2);
        return loss(res, gt, cfg.gamma);
    };

    // Inline central-difference sweep; every parameter tensor is visited.
    for (size_t i = 0; i < ps.size(); ++i) ps.at(i).zero_grad();
    Tensor<double> l = loss_fn();
    backward(l);
    double max_rel = 0;
    long checked = 0;
    bool all_ok = true;
    const double h = 1e-6;
    for (size_t pi = 0; pi < ps.size(); ++pi) {
        auto impl = ps.at(pi).impl();
        const std::vector<double> analytic =
            ps.at(pi).has_grad() ? impl->grad : std::vector<double>(impl->data.size(), 0.0);
        double worst = 0;
        for (long i = 0; i < ps.at(pi).numel(); i += stride) {
            const double orig = impl->data[i];
            // Score against the closest of three step sizes: tiny steps lose
            // digits to cancellation, large ones can cross a ReLU/max kink.
            double rel = 0;
            for (const double step : {h, 10 * h, 100 * h}) {
                impl->data[i] = orig + step;
                const double lp = loss_fn().item();
                impl->data[i] = orig - step;
                const double lm = loss_fn().item();
                impl->data[i] = orig;
                const double fd = (lp - lm) / (2 * step);
                const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
                const double r = std::abs(fd - analytic[i]) / denom;
                if (step == h || r < rel) rel = r;
            }
            worst = std::max(worst, rel);
            ++checked;
        }
        std::printf("%-12s rel_err %.3e %s\n", ps.names()[pi].c_str(), worst,
                    worst < 1e-4 ? "ok" : "FAIL");
        if (!(worst < 1e-4)) all_ok = false;
        max_rel = std::max(max_rel, worst);
    }
    std::printf("gradcheck: %ld elements, max rel_err %.3e -> %s\n", checked, max_rel,
                all_ok ? "PASS" : "FAIL");
    if (!all_ok) throw NumericalError("gradient check failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"wavelet-stereo desk-scale toolkit"};
    app.require_subcommand(1);

    int threads = 0;
    if (const char* env = std::getenv("WSTEREO_THREADS")) threads = std::atoi(env);
    app.add_option("--threads", threads, "worker thread count (0 = hardware)");

    // dwt
    auto* dwt = app.add_subcommand("dwt", "Haar wavelet decomposition of an image");
    std::string dwt_input, dwt_out, dwt_pad = "none";
    int dwt_levels = 3;
    bool dwt_verify = false;
    dwt->add_option("--input", dwt_input, "PGM/PPM image")->required();
    dwt->add_option("--levels", dwt_levels, "decomposition levels");
    dwt->add_option("--out", dwt_out, "output directory")->required();
    dwt->add_flag("--verify", dwt_verify, "reconstruct and print max abs error");
    dwt->add_option("--pad", dwt_pad, "none | reflect")
        ->check(CLI::IsMember({"none", "reflect"}));

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic stereo pair");
    std::string synth_spec, synth_out;
    synth->add_option("--spec", synth_spec, "SynthSpec JSON")->required();
    synth->add_option("--out", synth_out, "output directory")->required();

    // train-toy
    auto* train = app.add_subcommand("train-toy", "overfit the model on a tiny dataset");
    std::string train_config, train_data, train_out;
    train->add_option("--config", train_config, "ModelConfig JSON");
    train->add_option("--data", train_data, "sample directory")->required();
    train->add_option("--out", train_out, "weights output (.wstw)")->required();

    // infer
    auto* infer = app.add_subcommand("infer", "run the iterative refinement");
    std::string in_weights, in_left, in_right, in_out, in_config;
    int in_iters = 16;
    bool in_gru = false;
    infer->add_option("--weights", in_weights, "weights file")->required();
    infer->add_option("--left", in_left, "left image")->required();
    infer->add_option("--right", in_right, "right image")->required();
    infer->add_option("--iters", in_iters, "update iterations");
    infer->add_option("--out", in_out, "output directory")->required();
    infer->add_option("--config", in_config, "ModelConfig JSON");
    infer->add_flag("--gru-baseline", in_gru, "use the ConvGRU baseline update");

    // eval
    auto* eval = app.add_subcommand("eval", "frequency-split disparity metrics");
    std::string ev_pred, ev_gt, ev_ref, ev_out, ev_trace;
    eval->add_option("--pred", ev_pred, "disparity file or infer output directory")->required();
    eval->add_option("--gt", ev_gt, "ground-truth disparity")->required();
    eval->add_option("--ref-image", ev_ref, "image for the edge mask")->required();
    eval->add_option("--out", ev_out, "metrics JSON path")->required();
    eval->add_option("--trace", ev_trace, "per-iteration CSV path");

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    std::string gc_config;
    std::uint64_t gc_seed = 17;
    int gc_stride = 41;
    gc->add_option("--config", gc_config, "ModelConfig JSON");
    gc->add_option("--seed", gc_seed, "RNG seed");
    gc->add_option("--stride", gc_stride, "check every n-th element per tensor");

    CLI11_PARSE(app, argc, argv);

    try {
        if (threads > 0) set_threads(threads);
        if (*dwt) return cmd_dwt(dwt_input, dwt_levels, dwt_out, dwt_verify, dwt_pad);
        if (*synth) return cmd_synth(synth_spec, synth_out);
        if (*train) return cmd_train_toy(train_config, train_data, train_out);
        if (*infer)
            return cmd_infer(in_weights, in_left, in_right, in_iters, in_out, in_config, in_gru);
        if (*eval) return cmd_eval(ev_pred, ev_gt, ev_ref, ev_out, ev_trace);
        if (*gc) return cmd_gradcheck(gc_config, gc_seed, gc_stride);
    } catch (const FormatError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const TrainingError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 5;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const Error& e) { // dimension / config / range / value / graph
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
    return 0;
}
