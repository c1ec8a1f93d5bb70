#include "rotpretext/clip.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace rotpretext {

VideoClip::VideoClip(Tensor t) : tensor(std::move(t)) {
    if (tensor.rank() != 4)
        throw ShapeError("VideoClip tensor must be [C][T][H][W], got " +
                         shape_to_string(tensor.shape()));
}

VideoClip VideoClip::zeros(int c, int t, int h, int w) {
    return VideoClip(Tensor::zeros({c, t, h, w}));
}

float& VideoClip::at(int c, int t, int h, int w) {
    const auto& s = tensor.shape();
    return tensor.values()[((static_cast<std::size_t>(c) * s[1] + t) * s[2] + h) * s[3] + w];
}

const float& VideoClip::at(int c, int t, int h, int w) const {
    const auto& s = tensor.shape();
    return tensor.values()[((static_cast<std::size_t>(c) * s[1] + t) * s[2] + h) * s[3] + w];
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

bool get_u32(std::istream& is, std::uint32_t& v) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
    v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

}  // namespace

VideoClip load_clip(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open clip: " + path);
    char magic[4];
    if (!is.read(magic, 4))
        throw FormatError(FormatError::Kind::Truncated, "clip shorter than magic: " + path);
    if (std::memcmp(magic, kClipMagic, 4) != 0)
        throw FormatError(FormatError::Kind::BadMagic, "not an RVC clip file: " + path);
    std::uint32_t ext[4];
    for (auto& e : ext) {
        if (!get_u32(is, e))
            throw FormatError(FormatError::Kind::Truncated, "clip header truncated: " + path);
        if (e == 0 || e > (1u << 20))
            throw FormatError(FormatError::Kind::ExtentOverflow,
                              "clip extent out of range: " + path);
    }
    const std::size_t count =
        static_cast<std::size_t>(ext[0]) * ext[1] * ext[2] * ext[3];
    if (count > (std::size_t{1} << 31))
        throw FormatError(FormatError::Kind::ExtentOverflow, "clip too large: " + path);
    std::vector<float> values(count);
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(count * sizeof(float))))
        throw FormatError(FormatError::Kind::Truncated, "clip payload truncated: " + path);
    return VideoClip(Tensor::from_values({static_cast<int>(ext[0]), static_cast<int>(ext[1]),
                                          static_cast<int>(ext[2]), static_cast<int>(ext[3])},
                                         std::move(values)));
}

void save_clip(const VideoClip& clip, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open clip for writing: " + path);
    os.write(kClipMagic, 4);
    for (int e : clip.tensor.shape()) put_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(clip.tensor.values().data()),
             static_cast<std::streamsize>(clip.tensor.size() * sizeof(float)));
    if (!os) throw IoError("failed writing clip: " + path);
}

VideoClip sample_subclip(const VideoClip& clip, int length, Rng& rng) {
    const int T = clip.frames();
    if (length < 1 || length > T)
        throw ShapeError("sample_subclip length " + std::to_string(length) +
                         " out of range for clip with " + std::to_string(T) + " frames");
    const int start = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(T - length + 1)));
    const int C = clip.channels(), H = clip.height(), W = clip.width();
    VideoClip out = VideoClip::zeros(C, length, H, W);
    const std::size_t frame = static_cast<std::size_t>(H) * W;
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < length; ++t)
            std::memcpy(out.tensor.values().data() + (static_cast<std::size_t>(c) * length + t) * frame,
                        clip.tensor.values().data() +
                            (static_cast<std::size_t>(c) * T + start + t) * frame,
                        frame * sizeof(float));
    return out;
}

VideoClip resize_bilinear(const VideoClip& clip, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("resize target extents must be >= 1");
    const int C = clip.channels(), T = clip.frames(), H = clip.height(), W = clip.width();
    if (out_h == H && out_w == W) return clip;
    VideoClip out = VideoClip::zeros(C, T, out_h, out_w);
    const double sh = static_cast<double>(H) / out_h;
    const double sw = static_cast<double>(W) / out_w;
    auto lerp = [](float a, float b, float t) { return a + t * (b - a); };
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int y = 0; y < out_h; ++y) {
                double src_y = (y + 0.5) * sh - 0.5;
                if (src_y < 0) src_y = 0;
                int y0 = static_cast<int>(src_y);
                if (y0 > H - 1) y0 = H - 1;
                const int y1 = y0 + 1 > H - 1 ? H - 1 : y0 + 1;
                const float fy = static_cast<float>(src_y - y0);
                for (int x = 0; x < out_w; ++x) {
                    double src_x = (x + 0.5) * sw - 0.5;
                    if (src_x < 0) src_x = 0;
                    int x0 = static_cast<int>(src_x);
                    if (x0 > W - 1) x0 = W - 1;
                    const int x1 = x0 + 1 > W - 1 ? W - 1 : x0 + 1;
                    const float fx = static_cast<float>(src_x - x0);
                    const float top = lerp(clip.at(c, t, y0, x0), clip.at(c, t, y0, x1), fx);
                    const float bot = lerp(clip.at(c, t, y1, x0), clip.at(c, t, y1, x1), fx);
                    out.at(c, t, y, x) = lerp(top, bot, fy);
                }
            }
    return out;
}

VideoClip spatial_crop(const VideoClip& clip, int top, int left, int size) {
    const int C = clip.channels(), T = clip.frames(), H = clip.height(), W = clip.width();
    if (size < 1 || top < 0 || left < 0 || top + size > H || left + size > W)
        throw ShapeError("crop window [" + std::to_string(top) + "," + std::to_string(left) +
                         ")+" + std::to_string(size) + " outside " + std::to_string(H) + "x" +
                         std::to_string(W));
    VideoClip out = VideoClip::zeros(C, T, size, size);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int y = 0; y < size; ++y)
                std::memcpy(&out.at(c, t, y, 0), &clip.at(c, t, top + y, left),
                            static_cast<std::size_t>(size) * sizeof(float));
    return out;
}

VideoClip spatial_crop(const VideoClip& clip, int size, CropMode mode, Rng* rng) {
    const int H = clip.height(), W = clip.width();
    if (size > H || size > W)
        throw ShapeError("crop size " + std::to_string(size) + " exceeds frame " +
                         std::to_string(H) + "x" + std::to_string(W));
    int top, left;
    if (mode == CropMode::kCenter) {
        top = (H - size) / 2;
        left = (W - size) / 2;
    } else {
        if (!rng) throw ConfigError("random crop needs an rng");
        top = static_cast<int>(rng->uniform_index(static_cast<std::size_t>(H - size + 1)));
        left = static_cast<int>(rng->uniform_index(static_cast<std::size_t>(W - size + 1)));
    }
    return spatial_crop(clip, top, left, size);
}

VideoClip horizontal_flip(const VideoClip& clip, double probability, Rng& rng) {
    if (probability < 0.0 || probability > 1.0)
        throw ConfigError("flip probability must be in [0,1]");
    const bool flip = rng.uniform() < probability;
    if (!flip) return clip;
    const int C = clip.channels(), T = clip.frames(), H = clip.height(), W = clip.width();
    VideoClip out = VideoClip::zeros(C, T, H, W);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t < T; ++t)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) out.at(c, t, y, x) = clip.at(c, t, y, W - 1 - x);
    return out;
}

VideoClip compute_dif(const VideoClip& clip) {
    const int C = clip.channels(), T = clip.frames(), H = clip.height(), W = clip.width();
    if (T < 2) throw ShapeError("compute_dif needs at least 2 frames");
    VideoClip out = VideoClip::zeros(C, T - 1, H, W);
    for (int c = 0; c < C; ++c)
        for (int t = 0; t + 1 < T; ++t)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    out.at(c, t, y, x) = clip.at(c, t + 1, y, x) - clip.at(c, t, y, x);
    return out;
}

}  // namespace rotpretext
