#include "rotpretext/rotation.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace rotpretext {

RotationSet::RotationSet(std::vector<double> degrees) : degrees_(std::move(degrees)) {
    if (degrees_.empty()) throw ConfigError("rotation set must not be empty");
    for (std::size_t i = 0; i < degrees_.size(); ++i) {
        if (degrees_[i] < 0.0 || degrees_[i] >= 360.0)
            throw ConfigError("rotation degrees must lie in [0,360)");
        for (std::size_t j = i + 1; j < degrees_.size(); ++j)
            if (degrees_[i] == degrees_[j])
                throw ConfigError("rotation set contains duplicate degrees");
    }
}

RotationSet RotationSet::parse(const std::string& comma_separated) {
    std::vector<double> degrees;
    std::stringstream ss(comma_separated);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            degrees.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("bad rotation degree token: '" + tok + "'");
        }
    }
    return RotationSet(std::move(degrees));
}

bool RotationSet::right_angle_only() const {
    for (double d : degrees_)
        if (std::fmod(d, 90.0) != 0.0) return false;
    return true;
}

std::string RotationSet::to_string() const {
    std::ostringstream os;
    for (std::size_t i = 0; i < degrees_.size(); ++i) {
        if (i) os << ",";
        const double d = degrees_[i];
        if (d == static_cast<long long>(d))
            os << static_cast<long long>(d);
        else
            os << d;
    }
    return os.str();
}

int RotationSet::expanded_extent(int s) const {
    return right_angle_only() ? s : valid_rotation_crop(s);
}

namespace {

// One CCW quarter turn: out[r][c] = in[c][W-1-r]; output is H'=W, W'=H.
VideoClip rotate90_once(const VideoClip& clip) {
    const int C = clip.channels(), T = clip.frames(), H = clip.height(), W = clip.width();
    VideoClip out = VideoClip::zeros(C, T, W, H);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int r = 0; r < W; ++r)
                for (int col = 0; col < H; ++col)
                    out.at(c, t, r, col) = clip.at(c, t, col, W - 1 - r);
    return out;
}

}  // namespace

VideoClip rotate90(const VideoClip& clip, int k) {
    if (k < 0 || k > 3) throw ConfigError("rotate90 step must be in {0,1,2,3}");
    if (k == 0) return clip;
    VideoClip out = rotate90_once(clip);
    for (int i = 1; i < k; ++i) out = rotate90_once(out);
    return out;
}

int valid_rotation_crop(int s) {
    int v = static_cast<int>(std::floor(static_cast<double>(s) / std::sqrt(2.0)));
    if (v % 2 != 0) --v;
    if (v < 2) throw ShapeError("frame too small for a rotation-safe crop");
    return v;
}

VideoClip rotate_arbitrary(const VideoClip& clip, double degrees) {
    const int C = clip.channels(), T = clip.frames(), H = clip.height(), W = clip.width();
    if (H != W) throw ShapeError("rotate_arbitrary requires square frames, got " +
                                 std::to_string(H) + "x" + std::to_string(W));
    const int S = H;
    const int S2 = valid_rotation_crop(S);
    // Fractional offset keeps the crop symmetric about the frame center, so
    // the in-bounds guarantee holds for odd sizes too.
    const double off = (S - S2) / 2.0;
    const double rad = degrees * 3.14159265358979323846 / 180.0;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double center = (S - 1) / 2.0;

    VideoClip out = VideoClip::zeros(C, T, S2, S2);
    auto lerp = [](float a, float b, float t) { return a + t * (b - a); };
    for (int r = 0; r < S2; ++r) {
        for (int col = 0; col < S2; ++col) {
            const double y = r + off - center;
            const double x = col + off - center;
            // Inverse map of a counterclockwise rotation in row/col coords.
            const double src_x = center + x * cs - y * sn;
            const double src_y = center + x * sn + y * cs;
            if (src_x < -1e-6 || src_x > S - 1 + 1e-6 || src_y < -1e-6 || src_y > S - 1 + 1e-6)
                throw ShapeError("rotation sampled outside the source frame");
            double fx = src_x < 0 ? 0 : src_x;
            double fy = src_y < 0 ? 0 : src_y;
            int x0 = static_cast<int>(fx);
            int y0 = static_cast<int>(fy);
            if (x0 > S - 1) x0 = S - 1;
            if (y0 > S - 1) y0 = S - 1;
            const int x1 = x0 + 1 > S - 1 ? S - 1 : x0 + 1;
            const int y1 = y0 + 1 > S - 1 ? S - 1 : y0 + 1;
            const float wx = static_cast<float>(fx - x0);
            const float wy = static_cast<float>(fy - y0);
            for (int c = 0; c < C; ++c)
                for (int t = 0; t < T; ++t) {
                    const float top = lerp(clip.at(c, t, y0, x0), clip.at(c, t, y0, x1), wx);
                    const float bot = lerp(clip.at(c, t, y1, x0), clip.at(c, t, y1, x1), wx);
                    out.at(c, t, r, col) = lerp(top, bot, wy);
                }
        }
    }
    return out;
}

std::vector<std::pair<VideoClip, int>> expand_with_rotations(const std::vector<VideoClip>& clips,
                                                             const RotationSet& set) {
    std::vector<std::pair<VideoClip, int>> out;
    out.reserve(clips.size() * static_cast<std::size_t>(set.k()));
    const bool exact = set.right_angle_only();
    for (const auto& clip : clips) {
        for (int i = 0; i < set.k(); ++i) {
            const double deg = set.degrees()[static_cast<std::size_t>(i)];
            if (exact) {
                out.emplace_back(rotate90(clip, static_cast<int>(deg / 90.0) % 4), i);
            } else {
                out.emplace_back(rotate_arbitrary(clip, deg), i);
            }
        }
    }
    return out;
}

Tensor stack_clips(const std::vector<VideoClip>& clips) {
    if (clips.empty()) throw ShapeError("cannot stack an empty clip list");
    const auto& s0 = clips.front().tensor.shape();
    for (const auto& c : clips)
        if (c.tensor.shape() != s0)
            throw ShapeError("stacked clips must share one shape; got " +
                             shape_to_string(c.tensor.shape()) + " vs " + shape_to_string(s0));
    const int B = static_cast<int>(clips.size());
    Tensor out = Tensor::zeros({B, s0[0], s0[1], s0[2], s0[3]});
    const std::size_t sample = element_count(s0);
    for (int b = 0; b < B; ++b)
        std::memcpy(out.values().data() + static_cast<std::size_t>(b) * sample,
                    clips[static_cast<std::size_t>(b)].tensor.values().data(),
                    sample * sizeof(float));
    return out;
}

std::pair<Tensor, std::vector<int>> expand_batch_with_rotations(
    const std::vector<VideoClip>& clips, const RotationSet& set) {
    auto expanded = expand_with_rotations(clips, set);
    std::vector<VideoClip> rotated;
    std::vector<int> labels;
    rotated.reserve(expanded.size());
    labels.reserve(expanded.size());
    for (auto& [clip, label] : expanded) {
        rotated.push_back(std::move(clip));
        labels.push_back(label);
    }
    return {stack_clips(rotated), std::move(labels)};
}

}  // namespace rotpretext
