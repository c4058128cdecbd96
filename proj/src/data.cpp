#include "posediff/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "posediff/errors.hpp"
#include "posediff/rng.hpp"

namespace posediff {

namespace {

constexpr int kAxisDim = 72;  // 24 joints x 3
constexpr int kBasisRank = 8;

int coord(int joint, int axis) { return 3 * joint + axis; }

// Fixed direction basis: the first five columns are designed joint-angle
// directions with recognizable semantics (they drive the caption predicates);
// the last three are small dense directions so the manifold is genuinely
// 8-dimensional.  The basis never depends on the corpus seed.
const std::array<std::array<double, kBasisRank>, kAxisDim>& direction_basis() {
    static const auto table = [] {
        std::array<std::array<double, kBasisRank>, kAxisDim> w{};
        // Column 0: lower body folds into a kneel.
        w[coord(kLKnee, 0)][0] = 1.3;
        w[coord(kRKnee, 0)][0] = 1.3;
        w[coord(kLHip, 0)][0] = -0.5;
        w[coord(kRHip, 0)][0] = -0.5;
        w[coord(kLAnkle, 0)][0] = 0.3;
        w[coord(kRAnkle, 0)][0] = 0.3;
        // Columns 1 and 2: left / right arm swings up about the collar z axis.
        w[coord(kLShoulder, 2)][1] = 1.1;
        w[coord(kLCollar, 2)][1] = 0.25;
        w[coord(kRShoulder, 2)][2] = -1.1;
        w[coord(kRCollar, 2)][2] = -0.25;
        // Column 3: forward lean through the spine chain.
        w[coord(kSpine1, 0)][3] = 0.35;
        w[coord(kSpine2, 0)][3] = 0.35;
        w[coord(kSpine3, 0)][3] = 0.35;
        w[coord(kNeck, 0)][3] = 0.15;
        // Column 4: both elbows bend (mirrored hinge signs).
        w[coord(kLElbow, 1)][4] = -1.0;
        w[coord(kRElbow, 1)][4] = 1.0;
        // Columns 5-7: fixed dense low-amplitude directions.
        RngStream rng(3137);
        for (int c = 5; c < kBasisRank; ++c)
            for (int i = 0; i < kAxisDim; ++i) w[static_cast<size_t>(i)][static_cast<size_t>(c)] = 0.12 * rng.next_gauss();
        return w;
    }();
    return table;
}

}  // namespace

const std::array<double, 72>& joint_limit_box() {
    static const auto table = [] {
        std::array<double, kAxisDim> lim{};
        auto set = [&](int j, double x, double y, double z) {
            lim[static_cast<size_t>(coord(j, 0))] = x;
            lim[static_cast<size_t>(coord(j, 1))] = y;
            lim[static_cast<size_t>(coord(j, 2))] = z;
        };
        set(kPelvis, 0.3, 0.3, 0.3);
        set(kLHip, 1.2, 0.5, 0.5);
        set(kRHip, 1.2, 0.5, 0.5);
        set(kSpine1, 0.5, 0.5, 0.5);
        set(kLKnee, 2.2, 0.15, 0.15);  // hinge
        set(kRKnee, 2.2, 0.15, 0.15);
        set(kSpine2, 0.5, 0.5, 0.5);
        set(kLAnkle, 0.8, 0.3, 0.3);
        set(kRAnkle, 0.8, 0.3, 0.3);
        set(kSpine3, 0.5, 0.5, 0.5);
        set(kLFoot, 0.4, 0.4, 0.4);
        set(kRFoot, 0.4, 0.4, 0.4);
        set(kNeck, 0.6, 0.6, 0.6);
        set(kLCollar, 0.4, 0.4, 0.4);
        set(kRCollar, 0.4, 0.4, 0.4);
        set(kHead, 0.6, 0.6, 0.6);
        set(kLShoulder, 1.5, 1.2, 1.5);
        set(kRShoulder, 1.5, 1.2, 1.5);
        set(kLElbow, 0.15, 2.2, 0.15);  // hinge
        set(kRElbow, 0.15, 2.2, 0.15);
        set(kLWrist, 0.8, 0.8, 0.8);
        set(kRWrist, 0.8, 0.8, 0.8);
        set(kLHand, 0.3, 0.3, 0.3);
        set(kRHand, 0.3, 0.3, 0.3);
        return lim;
    }();
    return table;
}

std::array<double, 72> synth_axis_angles(const CorpusSpec& spec, int id) {
    if (spec.latent_rank < 1 || spec.latent_rank > kBasisRank)
        throw ValidationError("synth_axis_angles: latent_rank must lie in [1, 8]");
    RngStream stream = RngStream(spec.seed).child(static_cast<std::uint64_t>(id));
    std::array<double, kBasisRank> u{};
    for (int k = 0; k < spec.latent_rank; ++k) u[static_cast<size_t>(k)] = stream.next_gauss();

    const auto& w = direction_basis();
    const auto& lim = joint_limit_box();
    std::array<double, kAxisDim> aa{};
    for (int i = 0; i < kAxisDim; ++i) {
        double v = 0;
        for (int k = 0; k < spec.latent_rank; ++k) v += w[static_cast<size_t>(i)][static_cast<size_t>(k)] * u[static_cast<size_t>(k)];
        const double l = lim[static_cast<size_t>(i)];
        aa[static_cast<size_t>(i)] = std::clamp(v, -l, l);
    }
    return aa;
}

std::string derive_caption(const std::array<double, 72>& aa) {
    std::vector<std::string> phrases;
    if (aa[coord(kLKnee, 0)] > 1.0 && aa[coord(kRKnee, 0)] > 1.0) phrases.push_back("kneeling");
    if (std::abs(aa[coord(kLKnee, 0)]) < 0.2 && std::abs(aa[coord(kRKnee, 0)]) < 0.2) phrases.push_back("standing");
    if (aa[coord(kLShoulder, 2)] > 0.7) phrases.push_back("left arm raised");
    if (aa[coord(kRShoulder, 2)] < -0.7) phrases.push_back("right arm raised");
    if (aa[coord(kLElbow, 1)] < -0.55 && aa[coord(kRElbow, 1)] > 0.55) phrases.push_back("arms bent");
    if (aa[coord(kSpine1, 0)] + aa[coord(kSpine2, 0)] + aa[coord(kSpine3, 0)] > 0.55)
        phrases.push_back("leaning forward");
    if (phrases.empty()) return "neutral";
    std::string caption = phrases[0];
    for (size_t i = 1; i < phrases.size(); ++i) caption += ", " + phrases[i];
    return caption;
}

std::vector<PoseRecord> synth_corpus(const CorpusSpec& spec) {
    if (spec.size < 1) throw ValidationError("synth_corpus: corpus size must be >= 1");
    if (spec.latent_rank < 1 || spec.latent_rank > kBasisRank)
        throw ValidationError("synth_corpus: latent_rank must lie in [1, 8]");
    std::vector<PoseRecord> out;
    out.reserve(static_cast<size_t>(spec.size));
    for (int id = 0; id < spec.size; ++id) {
        const std::array<double, 72> aa = synth_axis_angles(spec, id);
        PoseRecord rec;
        rec.id = id;
        rec.split = id % 8 == 7 ? "test" : "train";
        rec.caption = derive_caption(aa);
        for (int j = 0; j < kJointCount; ++j) {
            const Vec3 v(aa[static_cast<size_t>(coord(j, 0))], aa[static_cast<size_t>(coord(j, 1))],
                         aa[static_cast<size_t>(coord(j, 2))]);
            rec.pose.joints[static_cast<size_t>(j)] = matrix_to_sixd(axis_angle_to_matrix(v));
        }
        out.push_back(std::move(rec));
    }
    return out;
}

void save_poses(const std::vector<PoseRecord>& records, const std::string& path) {
    std::set<int> seen;
    for (const PoseRecord& r : records)
        if (!seen.insert(r.id).second)
            throw ValidationError("save_poses: duplicate record id " + std::to_string(r.id));

    std::ofstream out(path);
    if (!out) throw Error("save_poses: cannot open " + path);
    out << "PDPS1\n";
    for (const PoseRecord& r : records) {
        nlohmann::json j;
        j["id"] = r.id;
        j["split"] = r.split;
        if (r.caption) j["caption"] = *r.caption;
        nlohmann::json pose = nlohmann::json::array();
        for (const SixD& sd : r.pose.joints)
            for (const double v : sd.v) pose.push_back(v);
        j["pose"] = std::move(pose);
        out << j.dump() << "\n";
    }
    if (!out) throw Error("save_poses: write failed for " + path);
}

std::vector<PoseRecord> load_poses(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("load_poses: cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "PDPS1")
        throw FormatError("load_poses: missing PDPS1 header in " + path);

    std::vector<PoseRecord> out;
    std::set<int> seen;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw FormatError("load_poses: parse error at line " + std::to_string(lineno) + " of " + path);
        }
        PoseRecord rec;
        try {
            rec.id = j.at("id").get<int>();
            rec.split = j.at("split").get<std::string>();
            if (j.contains("caption")) rec.caption = j.at("caption").get<std::string>();
        } catch (const nlohmann::json::exception&) {
            throw FormatError("load_poses: malformed record at line " + std::to_string(lineno) + " of " + path);
        }
        if (rec.split != "train" && rec.split != "test")
            throw FormatError("load_poses: unknown split at line " + std::to_string(lineno) + " of " + path);
        if (!j.contains("pose") || !j["pose"].is_array() || j["pose"].size() != kPoseDim)
            throw FormatError("load_poses: pose length != 144 for record id " + std::to_string(rec.id));
        for (int i = 0; i < kPoseDim; ++i) {
            const auto& e = j["pose"][static_cast<size_t>(i)];
            if (!e.is_number())
                throw FormatError("load_poses: non-numeric pose entry for record id " + std::to_string(rec.id));
            rec.pose.joints[static_cast<size_t>(i / 6)].v[static_cast<size_t>(i % 6)] = e.get<double>();
        }
        if (!seen.insert(rec.id).second)
            throw FormatError("load_poses: duplicate record id " + std::to_string(rec.id));
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace posediff
