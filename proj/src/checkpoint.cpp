#include "meshgs/checkpoint.hpp"

#include "binary_io.hpp"
#include "meshgs/scene_io.hpp"
#include "meshgs/spherical_harmonics.hpp"

#include <json.hpp>

#include <algorithm>
#include <sstream>

namespace meshgs {

namespace {

constexpr std::uint32_t kFormatVersion = 1;

constexpr std::uint32_t tag(const char (&s)[5]) {
    return static_cast<std::uint32_t>(static_cast<unsigned char>(s[0])) |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[1])) << 8 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[2])) << 16 |
           static_cast<std::uint32_t>(static_cast<unsigned char>(s[3])) << 24;
}

constexpr std::uint32_t kTagGrid = tag("SDFG");
constexpr std::uint32_t kTagAppearance = tag("APPR");
constexpr std::uint32_t kTagBackground = tag("BGGS");
constexpr std::uint32_t kTagRefined = tag("RFGS");
constexpr std::uint32_t kTagMeta = tag("META");
constexpr std::uint32_t kTagOptimizer = tag("OPTM");

void write_section(std::ostream& out, std::uint32_t t, const std::string& payload) {
    binio::write_u32(out, t);
    binio::write_u64(out, payload.size());
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

void write_vec3(std::ostream& out, const Vec3& v) {
    for (int a = 0; a < 3; ++a) binio::write_f64(out, v[a]);
}

Vec3 read_vec3(std::istream& in) {
    Vec3 v;
    for (int a = 0; a < 3; ++a) v[a] = binio::read_f64(in);
    return v;
}

void copy_into(std::span<double> dst, const std::vector<double>& src, const char* what) {
    if (dst.size() != src.size()) throw ParseError(std::string("checkpoint ") + what + " has the wrong size");
    std::copy(src.begin(), src.end(), dst.begin());
}

std::string appearance_payload(const AppearanceField& a) {
    std::ostringstream out;
    const AppearanceConfig& c = a.config();
    write_vec3(out, a.bbox_min());
    write_vec3(out, a.bbox_max());
    for (int v : {c.hash.levels, c.hash.features_per_level, c.hash.log2_table_size, c.hash.base_resolution,
                  c.hidden_width, c.hidden_layers, c.sh_degree})
        binio::write_u32(out, static_cast<std::uint32_t>(v));
    binio::write_f64(out, c.hash.growth_factor);
    binio::write_f64_array(out, a.encoding().parameters());
    binio::write_f64_array(out, a.mlp().parameters());
    return out.str();
}

AppearanceField read_appearance(std::istream& in) {
    const Vec3 lo = read_vec3(in), hi = read_vec3(in);
    AppearanceConfig c;
    int* fields[] = {&c.hash.levels, &c.hash.features_per_level, &c.hash.log2_table_size, &c.hash.base_resolution,
                     &c.hidden_width, &c.hidden_layers, &c.sh_degree};
    for (int* f : fields) *f = static_cast<int>(binio::read_u32(in));
    c.hash.growth_factor = binio::read_f64(in);
    if (c.hash.log2_table_size > 30 || c.hash.levels > 64 || c.hidden_width > 4096 || c.hidden_layers > 64 ||
        c.sh_degree > kMaxShDegree)
        throw ParseError("checkpoint appearance configuration out of range");
    AppearanceField a(c, lo, hi, 0);
    copy_into(a.encoding().parameters(), binio::read_f64_array(in), "hash table");
    copy_into(a.mlp().parameters(), binio::read_f64_array(in), "network");
    return a;
}

std::string background_payload(const BackgroundGaussians& bg) {
    std::ostringstream out;
    binio::write_u32(out, static_cast<std::uint32_t>(bg.sh_degree));
    for (const auto* v : {&bg.means, &bg.rotations, &bg.log_scales, &bg.opacity_logits, &bg.sh})
        binio::write_f64_array(out, *v);
    return out.str();
}

BackgroundGaussians read_background(std::istream& in) {
    BackgroundGaussians bg;
    bg.sh_degree = static_cast<int>(binio::read_u32(in));
    for (auto* v : {&bg.means, &bg.rotations, &bg.log_scales, &bg.opacity_logits, &bg.sh}) *v = binio::read_f64_array(in);
    bg.validate();
    return bg;
}

std::string refined_payload(const RefinedGaussians& rg) {
    std::ostringstream out;
    binio::write_u32(out, static_cast<std::uint32_t>(rg.k));
    binio::write_u32(out, static_cast<std::uint32_t>(rg.sh_degree));
    binio::write_u64(out, rg.mesh.vertices.size());
    for (const Vec3& v : rg.mesh.vertices) write_vec3(out, v);
    binio::write_u64(out, rg.mesh.faces.size());
    for (const Face& f : rg.mesh.faces)
        for (int c : f) binio::write_u32(out, static_cast<std::uint32_t>(c));
    for (const auto* v : {&rg.log_scales, &rg.rotations, &rg.thin_variance, &rg.sh}) binio::write_f64_array(out, *v);
    return out.str();
}

RefinedGaussians read_refined(std::istream& in) {
    RefinedGaussians rg;
    rg.k = static_cast<int>(binio::read_u32(in));
    rg.sh_degree = static_cast<int>(binio::read_u32(in));
    const std::uint64_t nv = binio::read_u64(in);
    if (nv > (std::uint64_t{1} << 32)) throw ParseError("checkpoint vertex count out of range");
    rg.mesh.vertices.resize(nv);
    for (Vec3& v : rg.mesh.vertices) v = read_vec3(in);
    const std::uint64_t nf = binio::read_u64(in);
    if (nf > (std::uint64_t{1} << 32)) throw ParseError("checkpoint face count out of range");
    rg.mesh.faces.resize(nf);
    for (Face& f : rg.mesh.faces)
        for (int& c : f) {
            c = static_cast<int>(binio::read_u32(in));
            if (c < 0 || static_cast<std::uint64_t>(c) >= nv) throw ParseError("checkpoint face index out of range");
        }
    for (auto* v : {&rg.log_scales, &rg.rotations, &rg.thin_variance, &rg.sh}) *v = binio::read_f64_array(in);
    rg.validate();
    return rg;
}

} // namespace

std::string checkpoint_bytes(const PipelineState& s) {
    std::ostringstream out;
    out.write("MGSC", 4);
    binio::write_u32(out, kFormatVersion);

    nlohmann::ordered_json meta;
    meta["config"] = config_to_json(s.config);
    meta["stage"] = stage_name(s.stage);
    meta["warmup_step"] = s.warmup_step;
    meta["joint_step"] = s.joint_step;
    meta["refine_step"] = s.refine_step;
    write_section(out, kTagMeta, meta.dump());

    std::ostringstream grid;
    write_grid_block(grid, s.grid);
    write_section(out, kTagGrid, grid.str());
    write_section(out, kTagAppearance, appearance_payload(s.appearance));
    write_section(out, kTagBackground, background_payload(s.background));
    if (s.refined) write_section(out, kTagRefined, refined_payload(*s.refined));
    std::ostringstream opt;
    s.optimizer.save(opt);
    write_section(out, kTagOptimizer, opt.str());
    return out.str();
}

PipelineState checkpoint_from_bytes(const std::string& bytes) {
    std::istringstream in(bytes);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != "MGSC") throw ParseError("not a checkpoint file (bad magic)");
    const std::uint32_t version = binio::read_u32(in);
    if (version != kFormatVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));

    PipelineState s;
    bool have_meta = false, have_grid = false, have_appearance = false;
    while (in.peek() != std::char_traits<char>::eof()) {
        const std::uint32_t t = binio::read_u32(in);
        const std::uint64_t length = binio::read_u64(in);
        if (length > bytes.size()) throw ParseError("checkpoint section length out of range");
        std::string payload(length, '\0');
        in.read(payload.data(), static_cast<std::streamsize>(length));
        if (!in) throw ParseError("truncated checkpoint section");
        std::istringstream section(payload);
        if (t == kTagMeta) {
            nlohmann::json meta;
            try {
                meta = nlohmann::json::parse(payload);
                s.config = config_from_json(meta.at("config"));
                s.stage = parse_stage(meta.at("stage").get<std::string>());
                s.warmup_step = meta.at("warmup_step").get<Index>();
                s.joint_step = meta.at("joint_step").get<Index>();
                s.refine_step = meta.at("refine_step").get<Index>();
            } catch (const nlohmann::json::exception& e) {
                throw ParseError(std::string("checkpoint metadata: ") + e.what());
            }
            have_meta = true;
        } else if (t == kTagGrid) {
            s.grid = read_grid_block(section);
            have_grid = true;
        } else if (t == kTagAppearance) {
            s.appearance = read_appearance(section);
            have_appearance = true;
        } else if (t == kTagBackground) {
            s.background = read_background(section);
        } else if (t == kTagRefined) {
            s.refined = read_refined(section);
        } else if (t == kTagOptimizer) {
            s.optimizer.load(section);
        }
        // Unknown sections are skipped.
    }
    if (!have_meta || !have_grid || !have_appearance) throw ParseError("checkpoint is missing required sections");
    return s;
}

void save_checkpoint(const std::filesystem::path& path, const PipelineState& state) {
    write_file_atomic(path, checkpoint_bytes(state));
}

PipelineState load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_bytes(read_file(path)); }

} // namespace meshgs
