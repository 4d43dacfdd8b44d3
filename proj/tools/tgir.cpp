// tgir: command-line front end. Stages exchange directories of UVF/PNG files.
//
// exit codes: 0 ok, 2 configuration error, 3 missing or malformed input / I/O
// failure, 4 numerical abort.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tgir/config.hpp"
#include "tgir/metrics.hpp"
#include "tgir/patch_denoiser.hpp"
#include "tgir/sampler.hpp"
#include "tgir/shadow_mask.hpp"
#include "tgir/synthetic.hpp"
#include "tgir/texture_builder.hpp"

namespace fs = std::filesystem;
using namespace tgir;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

bool g_verbose = false;

void log(const std::string& msg) {
    if (g_verbose) std::cerr << msg << '\n';
}

void write_text(const fs::path& path, const std::string& text) { write_text_atomic(path, text); }

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void require_file(const fs::path& p) {
    if (!fs::is_regular_file(p)) throw IoError("missing input: " + p.string());
}

UVField load_field(const fs::path& p) {
    require_file(p);
    const auto ext = p.extension().string();
    if (ext == ".png") return read_png(p);
    return read_uvf(p);
}

UVField load_mask(const fs::path& p) {
    UVField m = load_field(p);
    if (m.channels() != 1) m = extract_channels(m, 0, 1);
    for (double& v : m.data()) v = v > 0.5 ? 1.0 : 0.0;
    return m;
}

Vec3 parse_vec3(const std::string& key, const std::string& s) {
    Vec3 v{};
    std::string t = s;
    std::replace(t.begin(), t.end(), ',', ' ');
    std::istringstream in(t);
    for (double& x : v)
        if (!(in >> x)) throw ConfigError("config key " + key + ": expected three numbers, got '" + s + "'");
    std::string rest;
    if (in >> rest) throw ConfigError("config key " + key + ": expected three numbers, got '" + s + "'");
    return v;
}

std::string format_vec3(const Vec3& v) {
    std::ostringstream os;
    os.precision(17);
    os << v[0] << ',' << v[1] << ',' << v[2];
    return os.str();
}

// Sizes whose defaults are quoted for 1024^2 textures. "auto" scales them to the
// texture width; the resolved number is written back so the echo is exact.
int scaled_size(Config& c, const std::string& key, int at_1024, int width, int minimum) {
    const std::string v = c.get_string(key, "auto");
    if (v != "auto") return c.get<int>(key, at_1024);
    const int n = std::max(minimum, static_cast<int>(std::lround(at_1024 * width / 1024.0)));
    c.set(key, std::to_string(n));
    return c.get<int>(key, n);
}

// Rejects keys no subcommand reads; a shared pipeline config passes everywhere.
void finish(Config& c);

/// Options every subcommand shares.
struct Common {
    std::string config_path;
    int threads = 0;
    Config cfg;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "key=value configuration file with [sections]");
        app->add_option("--threads", threads, "worker threads (TGIR_THREADS takes precedence)");
    }

    void load() {
        if (!config_path.empty()) cfg = Config::load(config_path);
        int n = cfg.get<int>("run.threads", 1);
        if (threads > 0) n = threads;
        if (const char* env = std::getenv("TGIR_THREADS")) {
            try {
                n = std::stoi(env);
            } catch (...) {
                throw ConfigError("TGIR_THREADS must be a positive integer");
            }
        }
        if (n < 1) throw ConfigError("thread count must be >= 1");
        set_thread_count(n);
        // echo what actually ran
        cfg.set("run.threads", std::to_string(n));
        cfg.get<int>("run.threads", n);
    }
};

struct Manifest {
    std::vector<std::vector<fs::path>> rows;
    std::vector<int> ids;
};

// Lines of "<id> <path>..." with paths relative to the manifest's directory.
Manifest read_manifest(const fs::path& path, std::size_t columns) {
    require_file(path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    Manifest m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        for (std::string t; ls >> t;) tok.push_back(t);
        if (tok.empty()) continue;
        if (tok.size() != columns + 1)
            throw DecodeError(path.string() + ":" + std::to_string(lineno) + ": expected id and " +
                              std::to_string(columns) + " paths");
        int id = 0;
        try {
            id = std::stoi(tok[0]);
        } catch (...) {
            throw DecodeError(path.string() + ":" + std::to_string(lineno) + ": bad view id");
        }
        m.ids.push_back(id);
        std::vector<fs::path> row;
        for (std::size_t i = 1; i < tok.size(); ++i) row.push_back(path.parent_path() / tok[i]);
        m.rows.push_back(std::move(row));
    }
    if (m.rows.empty()) throw DecodeError("manifest lists no views: " + path.string());
    return m;
}

// ---------------------------------------------------------------------------

SceneSpec scene_from_config(Config& c) {
    SceneSpec s;
    s.resolution = c.get<int>("scene.resolution", s.resolution);
    s.seed = c.get<std::uint64_t>("scene.seed", s.seed);
    s.base_tone = parse_vec3("scene.tone", c.get_string("scene.tone", format_vec3(s.base_tone)));
    s.detail_amplitude = c.get<double>("scene.detail_amplitude", s.detail_amplitude);
    s.low_amplitude = c.get<double>("scene.low_amplitude", s.low_amplitude);
    s.blemish_density = c.get<double>("scene.blemish_density", s.blemish_density);
    if (!c.get<bool>("scene.shadow", true)) s.shadow.reset();
    ShadowSpec sh;
    sh.radius = c.get<double>("shadow.radius", sh.radius);
    sh.grid_size = c.get<int>("shadow.grid_size", sh.grid_size);
    sh.min_darkening = c.get<double>("shadow.min_darkening", sh.min_darkening);
    sh.max_darkening = c.get<double>("shadow.max_darkening", sh.max_darkening);
    sh.jitter = c.get<double>("shadow.jitter", sh.jitter);
    sh.center_y = c.get<double>("shadow.center_y", sh.center_y);
    sh.center_x = c.get<double>("shadow.center_x", sh.center_x);
    s.randomize_shadow_center = c.get<bool>("shadow.random_center", s.randomize_shadow_center);
    if (s.shadow) s.shadow = sh;
    s.view_count = c.get<int>("scene.views", s.view_count);
    s.view_scale = c.get<double>("scene.view_scale", s.view_scale);
    s.noise = c.get<double>("scene.noise", s.noise);
    s.soften_factor = c.get<double>("scene.soften_factor", s.soften_factor);
    if (s.resolution < 16 || s.resolution > 4096) throw ConfigError("scene.resolution must lie in [16, 4096]");
    if (s.view_count < 1) throw ConfigError("scene.views must be >= 1");
    if (s.noise < 0.0) throw ConfigError("scene.noise must be >= 0");
    if (!(s.view_scale > 0.0)) throw ConfigError("scene.view_scale must be > 0");
    return s;
}

int library_size_from_config(Config& c) {
    const int library = c.get<int>("scene.library_size", 5);
    if (library < 1) throw ConfigError("scene.library_size must be >= 1");
    return library;
}

int refine_iters_from_config(Config& c) {
    const int iters = c.get<int>("texture.refine_iters", 200);
    if (iters < 0) throw ConfigError("texture.refine_iters must be >= 0");
    return iters;
}

int cmd_synth(Common& co, const std::string& out, long long seed, int resolution, int views) {
    co.load();
    Config& c = co.cfg;
    if (seed >= 0) c.set("scene.seed", std::to_string(seed));
    if (resolution > 0) c.set("scene.resolution", std::to_string(resolution));
    if (views > 0) c.set("scene.views", std::to_string(views));
    const SceneSpec spec = scene_from_config(c);
    const int library = library_size_from_config(c);
    finish(c);

    const fs::path dir(out);
    make_dir(dir / "views");
    make_dir(dir / "library");
    log("synth: generating " + std::to_string(spec.resolution) + "^2 scene, seed " + std::to_string(spec.seed));
    const Scene sc = gen_scene(spec);
    write_uvf(sc.stack, dir / "stack.uvf");
    write_uvf(sc.normals, dir / "normals.uvf");
    write_uvf(sc.observation.target, dir / "target.uvf");
    write_png(to_preview(sc.observation.target), dir / "target.png");
    write_png(sc.observation.valid, dir / "valid.png");
    write_png(sc.mask, dir / "mask_gt.png");
    save_lighting(sc.light, dir);
    const Vec3 tone = mean_albedo(sc.stack);
    write_text(dir / "tone.txt", format_vec3(tone) + "\n");

    const auto lib = gen_reference_library(spec.resolution, library, spec.seed + 1, tone);
    for (std::size_t i = 0; i < lib.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "ref_%02zu.uvf", i);
        write_uvf(lib[i].stack, dir / "library" / name);
    }

    const SyntheticViews sv = gen_views(sc.stack, sc.light, sc.normals, spec);
    write_uvf(sv.source_texture, dir / "views" / "source_texture.uvf");
    std::string tex_manifest, shadow_manifest;
    for (std::size_t i = 0; i < sv.views.size(); ++i) {
        char base[32];
        std::snprintf(base, sizeof base, "view_%02zu", i);
        const std::string b(base);
        write_uvf(sv.views[i].image, dir / "views" / (b + "_image.uvf"));
        write_uvf(sv.softened[i], dir / "views" / (b + "_soft.uvf"));
        write_uvf(sv.views[i].correspondence, dir / "views" / (b + "_corr.uvf"));
        const std::string id = std::to_string(sv.views[i].id);
        tex_manifest += id + " " + b + "_image.uvf " + b + "_corr.uvf\n";
        shadow_manifest += id + " " + b + "_image.uvf " + b + "_soft.uvf " + b + "_corr.uvf\n";
    }
    write_text(dir / "views" / "texture_manifest.txt", tex_manifest);
    write_text(dir / "views" / "shadow_manifest.txt", shadow_manifest);
    write_text(dir / "config.txt", c.echo());
    return kExitOk;
}

std::vector<ViewSample> load_views(const Manifest& m, std::size_t image_col, std::size_t corr_col) {
    std::vector<ViewSample> views;
    for (std::size_t i = 0; i < m.rows.size(); ++i) {
        ViewSample v;
        v.id = m.ids[i];
        v.image = load_field(m.rows[i][image_col]);
        v.correspondence = load_field(m.rows[i][corr_col]);
        views.push_back(std::move(v));
    }
    return views;
}

int cmd_build_texture(Common& co, const std::string& manifest, const std::string& out) {
    co.load();
    Config& c = co.cfg;
    const int iters = refine_iters_from_config(c);
    finish(c);
    const auto views = load_views(read_manifest(manifest, 2), 0, 1);
    const fs::path dir(out);
    make_dir(dir);
    BlendResult b = blend_texture(views);
    log("build-texture: blended " + std::to_string(views.size()) + " views, refining " + std::to_string(iters) + " iterations");
    const UVField tex = gradient_refine(b.texture, views, b.valid, iters);
    write_uvf(tex, dir / "texture.uvf");
    write_png(to_preview(tex), dir / "texture.png");
    write_png(b.valid, dir / "valid.png");
    write_text(dir / "config.txt", c.echo());
    return kExitOk;
}

MaskConfig mask_from_config(Config& c, int width) {
    MaskConfig m;
    m.diff_threshold = c.get<double>("mask.diff_threshold", m.diff_threshold);
    m.median_radius = c.get<int>("mask.median_radius", m.median_radius);
    m.min_area = c.get<int>("mask.min_area", m.min_area);
    m.dilation_radius = scaled_size(c, "mask.dilation_radius", m.dilation_radius, width, 0);
    m.uv_vote_threshold = c.get<double>("mask.uv_vote_threshold", m.uv_vote_threshold);
    try {
        m.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    return m;
}

int cmd_detect_shadow(Common& co, const std::string& manifest, const std::string& out) {
    co.load();
    Config& c = co.cfg;
    const Manifest m = read_manifest(manifest, 3);
    const auto views = load_views(m, 0, 2);
    const MaskConfig mc = mask_from_config(c, views.front().correspondence.width());
    finish(c);
    std::vector<UVField> soft;
    for (const auto& row : m.rows) soft.push_back(load_field(row[1]));
    const fs::path dir(out);
    make_dir(dir);
    const UVField mask = shadow_mask_pipeline(views, soft, mc);
    write_png(mask, dir / "mask.png");
    write_text(dir / "config.txt", c.echo());
    return kExitOk;
}

SamplerConfig sampler_from_config(Config& c, int width) {
    SamplerConfig s;
    s.steps = c.get<int>("solve.steps", s.steps);
    s.t_init_frac = c.get<double>("solve.t_init_frac", s.t_init_frac);
    s.zeta = c.get<double>("solve.zeta", s.zeta);
    s.eta0 = c.get<double>("solve.eta0", s.eta0);
    s.eta_final_ratio = c.get<double>("solve.eta_final_ratio", s.eta_final_ratio);
    s.grid_size = scaled_size(c, "solve.grid_size", s.grid_size, width, 1);
    s.tv_weight = c.get<double>("solve.tv_weight", s.tv_weight);
    s.neg_weight = c.get<double>("solve.neg_weight", s.neg_weight);
    s.reg_stride = c.get<int>("solve.reg_stride", s.reg_stride);
    s.seed = c.get<std::uint64_t>("solve.seed", s.seed);
    s.use_grid = c.get<bool>("solve.use_grid", s.use_grid);
    s.exact_jacobian = c.get<bool>("solve.exact_jacobian", s.exact_jacobian);
    s.fit_outside_mask = c.get<bool>("solve.fit_outside_mask", s.fit_outside_mask);
    try {
        s.validate();
    } catch (const InvalidArgument& e) {
        throw ConfigError(e.what());
    }
    return s;
}

struct SolveOptions {
    SamplerConfig sampler;
    std::string prior, tone;
    BaselineConfig baseline;
};

SolveOptions solve_options_from_config(Config& c, int width) {
    SolveOptions o;
    o.sampler = sampler_from_config(c, width);
    o.prior = c.get_string("solve.prior", "gaussian");
    o.tone = c.get_string("solve.tone", "");
    o.baseline.iterations = c.get<int>("baseline.iterations", o.baseline.iterations);
    o.baseline.learning_rate = c.get<double>("baseline.learning_rate", o.baseline.learning_rate);
    if (o.baseline.iterations < 1 || !(o.baseline.learning_rate > 0))
        throw ConfigError("baseline: iterations >= 1 and learning_rate > 0");
    return o;
}

struct SolveFlags {
    std::string scene, out, mask, target, valid, prior = "gaussian";
    bool no_grid = false, no_prior = false;
    int grid_size = 0;
    long long seed = -1;
};

int cmd_solve(Common& co, const SolveFlags& f) {
    co.load();
    Config& c = co.cfg;
    if (f.no_grid) c.set("solve.use_grid", "false");
    if (f.grid_size > 0) c.set("solve.grid_size", std::to_string(f.grid_size));
    if (f.seed >= 0) c.set("solve.seed", std::to_string(f.seed));
    if (f.no_prior) c.set("solve.prior", "none");
    else if (f.prior != "gaussian") c.set("solve.prior", f.prior);

    const fs::path scene(f.scene);
    SolveInputs in;
    in.target = load_field(f.target.empty() ? scene / "target.uvf" : fs::path(f.target));
    in.valid = load_mask(f.valid.empty() ? scene / "valid.png" : fs::path(f.valid));
    in.normals = load_field(scene / "normals.uvf");
    in.mask = load_mask(f.mask.empty() ? scene / "mask_gt.png" : fs::path(f.mask));
    in.validate();

    const SolveOptions opt = solve_options_from_config(c, in.target.width());
    const SamplerConfig& sc = opt.sampler;
    const std::string& prior_kind = opt.prior;
    const std::string& tone_str = opt.tone;
    const BaselineConfig& bc = opt.baseline;
    finish(c);

    Vec3 tone{};
    if (!tone_str.empty()) {
        tone = parse_vec3("solve.tone", tone_str);
    } else {
        require_file(scene / "tone.txt");
        std::ifstream t(scene / "tone.txt");
        std::string line;
        std::getline(t, line);
        try {
            tone = parse_vec3("tone.txt", line);
        } catch (const ConfigError& e) {
            throw DecodeError(e.what());
        }
    }
    std::vector<fs::path> refs;
    if (fs::is_directory(scene / "library"))
        for (const auto& e : fs::directory_iterator(scene / "library"))
            if (e.path().extension() == ".uvf") refs.push_back(e.path());
    std::sort(refs.begin(), refs.end());
    if (refs.empty()) throw IoError("missing input: no reference stacks in " + (scene / "library").string());
    std::vector<ReferenceEntry> lib;
    for (const auto& p : refs) {
        UVField st = read_uvf(p);
        require_channels(st, stack_layout::kChannels, "reference stack");
        const Vec3 t = mean_albedo(st);
        lib.push_back({std::move(st), t});
    }
    const ReferenceEntry& chosen = select_reference(lib, tone);
    const UVField all(chosen.stack.height(), chosen.stack.width(), 1, 1.0);
    const UVField reference = color_match_stack(chosen.stack, tone, all);

    const fs::path dir(f.out);
    make_dir(dir);
    const auto observer = [](int step, const TraceRow& r) {
        if (step % 100 == 0) log("step " + std::to_string(step) + " l_pho " + std::to_string(r.l_pho));
    };
    SolveResult res;
    if (prior_kind == "none") {
        log("solve: Adam baseline without prior");
        res = solve_adam_baseline(in, reference, sc, bc, observer);
    } else {
        const DiffusionSchedule schedule(sc.steps);
        std::unique_ptr<Denoiser> prior;
        if (prior_kind == "gaussian")
            prior = std::make_unique<GaussianPriorDenoiser>(gaussian_prior_from(reference, schedule));
        else
            prior = std::make_unique<PatchDenoiser>(load_patch_net(fs::path(prior_kind)));
        log("solve: " + std::to_string(sc.t_init()) + " sampling steps");
        res = solve(in, *prior, schedule, reference, sc, observer);
    }
    save_result(res, dir);
    write_png(extract_channels(res.stack, stack_layout::kAlbedo, 3), dir / "albedo.png");
    write_text(dir / "config.txt", c.echo());
    log("solve: final l_pho " + std::to_string(res.final_loss));
    return kExitOk;
}

int cmd_render(Common& co, const std::string& result, const std::string& normals, const std::string& out) {
    co.load();
    finish(co.cfg);
    const fs::path rdir(result);
    const UVField stack = load_field(rdir / "stack.uvf");
    const UVField n = load_field(normals);
    const TexelGridLight light = load_lighting(rdir);
    const UVField albedo =
        stack.channels() == 3 ? stack : extract_channels(stack, stack_layout::kAlbedo, 3);
    const fs::path dir(out);
    make_dir(dir);
    const UVField img = render(light, albedo, n);
    write_uvf(img, dir / "render.uvf");
    write_png(to_preview(img), dir / "render.png");
    write_uvf(shading(light, n), dir / "shading.uvf");
    write_text(dir / "config.txt", co.cfg.echo());
    return kExitOk;
}

struct EvalFlags {
    std::string pred, truth, mask, pred_mask, truth_mask, out;
};

int cmd_eval(Common& co, const EvalFlags& f) {
    co.load();
    finish(co.cfg);
    std::ostringstream csv;
    csv.precision(9);
    csv << "metric,region,value\n";
    if (!f.pred.empty() || !f.truth.empty()) {
        if (f.pred.empty() || f.truth.empty()) throw ConfigError("eval: --pred and --truth go together");
        UVField a = load_field(f.pred), b = load_field(f.truth);
        if (a.channels() == stack_layout::kChannels) a = extract_channels(a, stack_layout::kAlbedo, 3);
        if (b.channels() == stack_layout::kChannels) b = extract_channels(b, stack_layout::kAlbedo, 3);
        csv << "psnr,whole," << psnr(a, b) << '\n';
        if (!f.mask.empty()) {
            const UVField m = load_mask(f.mask);
            csv << "psnr,masked," << psnr(a, b, m) << '\n';
        }
        csv << "ssim,whole," << ssim(a, b) << '\n';
    }
    if (!f.pred_mask.empty() || !f.truth_mask.empty()) {
        if (f.pred_mask.empty() || f.truth_mask.empty())
            throw ConfigError("eval: --pred-mask and --truth-mask go together");
        csv << "iou,mask," << mask_iou(load_mask(f.pred_mask), load_mask(f.truth_mask)) << '\n';
    }
    const fs::path out(f.out);
    if (out.has_parent_path()) make_dir(out.parent_path());
    write_text(out, csv.str());
    return kExitOk;
}

TrainConfig train_from_config(Config& c) {
    TrainConfig tc;
    tc.iterations = c.get<int>("train.iterations", tc.iterations);
    tc.batch = c.get<int>("train.batch", tc.batch);
    tc.patch = c.get<int>("train.patch", tc.patch);
    tc.learning_rate = c.get<double>("train.learning_rate", tc.learning_rate);
    tc.seed = c.get<std::uint64_t>("train.seed", tc.seed);
    tc.pool_size = c.get<int>("train.pool_size", tc.pool_size);
    tc.steps = c.get<int>("train.steps", tc.steps);
    if (tc.iterations < 0 || tc.batch < 1 || (tc.patch != 32 && tc.patch != 64) || tc.pool_size < 1 || tc.steps < 2)
        throw ConfigError("train: invalid iterations, batch, patch (32 or 64), pool_size or steps");
    return tc;
}

int cmd_train_prior(Common& co, const std::string& out, long long seed, int iterations) {
    co.load();
    Config& c = co.cfg;
    if (seed >= 0) c.set("train.seed", std::to_string(seed));
    if (iterations >= 0) c.set("train.iterations", std::to_string(iterations));
    const TrainConfig tc = train_from_config(c);
    finish(c);
    const fs::path dir(out);
    make_dir(dir);
    TrainReport rep;
    const PatchNet net = train_patch_denoiser(tc, &rep, [](int it, double loss) {
        if (it % 50 == 0) log("iteration " + std::to_string(it) + " loss " + std::to_string(loss));
    });
    save_patch_net(net, dir / "prior.tgdn");
    std::ostringstream curve;
    curve.precision(9);
    curve << "iteration,loss\n";
    for (std::size_t i = 0; i < rep.loss_curve.size(); ++i) curve << i + 1 << ',' << rep.loss_curve[i] << '\n';
    write_text(dir / "train_loss.csv", curve.str());
    std::ostringstream summary;
    summary.precision(9);
    summary << "metric,value\nuntrained_mse," << rep.untrained_mse << "\nheldout_mse," << rep.heldout_mse << '\n';
    write_text(dir / "train_summary.csv", summary.str());
    write_text(dir / "config.txt", c.echo());
    return kExitOk;
}

void finish(Config& c) {
    static const std::set<std::string> known = [] {
        Config probe;
        probe.get<int>("run.threads", 1);
        scene_from_config(probe);
        library_size_from_config(probe);
        refine_iters_from_config(probe);
        mask_from_config(probe, 1024);
        solve_options_from_config(probe, 1024);
        train_from_config(probe);
        return probe.looked_up();
    }();
    c.finish(known);
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const NumericalError& e) {
        std::cerr << "error: numerical failure at step " << e.step() << ": " << e.what() << '\n';
        return kExitNumerical;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const DecodeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitIo;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Texel-grid inverse rendering: synthesize, build textures, detect shadows, solve, render, evaluate"};
    app.require_subcommand(1);
    app.fallthrough();
    app.add_flag("-v,--verbose", g_verbose, "progress messages on stderr");

    Common co;
    auto* synth = app.add_subcommand("synth", "generate a synthetic scene directory");
    std::string synth_out;
    long long synth_seed = -1;
    int synth_res = 0, synth_views = 0;
    synth->add_option("--out", synth_out, "output scene directory")->required();
    synth->add_option("--seed", synth_seed, "scene seed (overrides scene.seed)");
    synth->add_option("--resolution", synth_res, "texture size (overrides scene.resolution)");
    synth->add_option("--views", synth_views, "view count (overrides scene.views)");
    co.attach(synth);

    auto* build = app.add_subcommand("build-texture", "blend per-view images into a UV texture");
    std::string build_manifest, build_out;
    build->add_option("--manifest", build_manifest, "lines of: id image corr")->required();
    build->add_option("--out", build_out, "output directory")->required();
    co.attach(build);

    auto* detect = app.add_subcommand("detect-shadow", "shadow mask from raw/softened view pairs");
    std::string detect_manifest, detect_out;
    detect->add_option("--manifest", detect_manifest, "lines of: id raw softened corr")->required();
    detect->add_option("--out", detect_out, "output directory")->required();
    co.attach(detect);

    auto* solve_cmd = app.add_subcommand("solve", "joint albedo sampling and lighting optimization");
    SolveFlags sf;
    solve_cmd->add_option("--scene", sf.scene, "scene directory (normals.uvf, tone.txt, library/)")->required();
    solve_cmd->add_option("--out", sf.out, "result directory")->required();
    solve_cmd->add_option("--mask", sf.mask, "shadow mask PNG (default <scene>/mask_gt.png)");
    solve_cmd->add_option("--target", sf.target, "UV observation (default <scene>/target.uvf)");
    solve_cmd->add_option("--valid", sf.valid, "validity PNG (default <scene>/valid.png)");
    solve_cmd->add_option("--prior", sf.prior, "'gaussian' or a .tgdn file");
    solve_cmd->add_flag("--no-grid", sf.no_grid, "disable the texel grid (global SH only)");
    solve_cmd->add_flag("--no-prior", sf.no_prior, "Adam on albedo and lighting without a prior");
    solve_cmd->add_option("--grid-size", sf.grid_size, "texels per grid cell (overrides solve.grid_size)");
    solve_cmd->add_option("--seed", sf.seed, "sampler seed (overrides solve.seed)");
    co.attach(solve_cmd);

    auto* render_cmd = app.add_subcommand("render", "render a solve result under its lighting");
    std::string render_result, render_normals, render_out;
    render_cmd->add_option("--result", render_result, "solve result directory")->required();
    render_cmd->add_option("--normals", render_normals, "normal map UVF")->required();
    render_cmd->add_option("--out", render_out, "output directory")->required();
    co.attach(render_cmd);

    auto* eval_cmd = app.add_subcommand("eval", "PSNR / SSIM / mask IoU as CSV");
    EvalFlags ef;
    eval_cmd->add_option("--pred", ef.pred, "predicted stack or texture");
    eval_cmd->add_option("--truth", ef.truth, "ground-truth stack or texture");
    eval_cmd->add_option("--mask", ef.mask, "region mask PNG for masked PSNR");
    eval_cmd->add_option("--pred-mask", ef.pred_mask, "predicted mask PNG");
    eval_cmd->add_option("--truth-mask", ef.truth_mask, "ground-truth mask PNG");
    eval_cmd->add_option("--out", ef.out, "CSV path")->required();
    co.attach(eval_cmd);

    auto* train_cmd = app.add_subcommand("train-prior", "train the patch denoiser on procedural stacks");
    std::string train_out;
    long long train_seed = -1;
    int train_iters = -1;
    train_cmd->add_option("--out", train_out, "output directory (prior.tgdn, train_loss.csv)")->required();
    train_cmd->add_option("--seed", train_seed, "training seed (overrides train.seed)");
    train_cmd->add_option("--iterations", train_iters, "iterations (overrides train.iterations)");
    co.attach(train_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    return guarded([&] {
        if (*synth) return cmd_synth(co, synth_out, synth_seed, synth_res, synth_views);
        if (*build) return cmd_build_texture(co, build_manifest, build_out);
        if (*detect) return cmd_detect_shadow(co, detect_manifest, detect_out);
        if (*solve_cmd) return cmd_solve(co, sf);
        if (*render_cmd) return cmd_render(co, render_result, render_normals, render_out);
        if (*eval_cmd) return cmd_eval(co, ef);
        return cmd_train_prior(co, train_out, train_seed, train_iters);
    });
}
