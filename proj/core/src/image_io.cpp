#include "spcl/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace spcl {

void write_pgm(const std::string& path, const TensorF& image) {
    if (image.rank() != 3 || image.shape[2] != 1)
        throw std::invalid_argument("write_pgm: single-channel rank-3 image required");
    const int64_t h = image.shape[0], w = image.shape[1];
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
    out << "P5\n" << w << ' ' << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            const float v = std::clamp(image.at(y, x, 0), 0.0f, 1.0f);
            row[static_cast<size_t>(x)] = static_cast<unsigned char>(std::lround(255.0f * v));
        }
        out.write(reinterpret_cast<const char*>(row.data()), w);
    }
    if (!out) throw std::runtime_error("write_pgm: write failed for '" + path + "'");
}

namespace {
// P5 header token, skipping whitespace and # comments
int64_t next_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = in.get();
        c = in.get();
    }
    int64_t value = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("read_pgm: malformed header in '" + path + "'");
    return value;
}
}  // namespace

TensorF read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pgm: cannot open '" + path + "'");
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') throw std::runtime_error("read_pgm: '" + path + "' is not a binary PGM");
    const int64_t w = next_token(in, path);
    const int64_t h = next_token(in, path);
    const int64_t maxval = next_token(in, path);
    if (maxval != 255) throw std::runtime_error("read_pgm: unsupported maxval in '" + path + "'");
    // header ends with exactly one whitespace byte, already consumed by next_token

    TensorF image({h, w, 1});
    std::vector<unsigned char> row(static_cast<size_t>(w));
    for (int64_t y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), w);
        if (!in) throw std::runtime_error("read_pgm: truncated pixel data in '" + path + "'");
        for (int64_t x = 0; x < w; ++x)
            image.at(y, x, 0) = static_cast<float>(row[static_cast<size_t>(x)]) / 255.0f;
    }
    return image;
}

}  // namespace spcl
