#include "progvc/msrq.hpp"

#include <cmath>
#include <sstream>

#include "progvc/error.hpp"

namespace progvc {

ScaleSchedule::ScaleSchedule(std::vector<ScaleSpec> scales) : scales_(std::move(scales)) {
    if (scales_.empty()) throw ShapeError("schedule: at least one scale is required");
    for (std::size_t k = 0; k < scales_.size(); ++k) {
        const auto& s = scales_[k];
        if (s.width == 0 || s.height == 0 || s.bits == 0)
            throw ShapeError("schedule: scale " + std::to_string(k + 1) + " has a zero extent");
        if (k > 0 && (s.width < scales_[k - 1].width || s.height < scales_[k - 1].height))
            throw ShapeError("schedule: scale " + std::to_string(k + 1) +
                             " is smaller than its predecessor");
    }
}

ScaleSchedule ScaleSchedule::make_default(std::size_t height, std::size_t width,
                                          std::size_t bits) {
    if (height == 0 || width == 0) throw ShapeError("schedule: empty latent");
    const std::size_t side = std::min(height, width);
    std::vector<ScaleSpec> scales;
    for (std::size_t n = 1; n < side; n *= 2)
        scales.push_back({static_cast<std::uint16_t>(n), static_cast<std::uint16_t>(n),
                          static_cast<std::uint16_t>(bits)});
    scales.push_back({static_cast<std::uint16_t>(width), static_cast<std::uint16_t>(height),
                      static_cast<std::uint16_t>(bits)});
    return ScaleSchedule(std::move(scales));
}

ScaleSchedule ScaleSchedule::parse(const std::string& text, std::size_t bits) {
    std::vector<ScaleSpec> scales;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto x = item.find('x');
        if (x == std::string::npos) throw ConfigError("schedule: bad scale '" + item + "'");
        try {
            const auto w = std::stoul(item.substr(0, x));
            const auto h = std::stoul(item.substr(x + 1));
            if (w > 0xFFFF || h > 0xFFFF) throw ConfigError("schedule: scale too large");
            scales.push_back({static_cast<std::uint16_t>(w), static_cast<std::uint16_t>(h),
                              static_cast<std::uint16_t>(bits)});
        } catch (const std::logic_error&) {
            throw ConfigError("schedule: bad scale '" + item + "'");
        }
    }
    return ScaleSchedule(std::move(scales));
}

std::string ScaleSchedule::to_string() const {
    std::string s;
    for (std::size_t k = 0; k < scales_.size(); ++k) {
        if (k) s += ",";
        s += std::to_string(scales_[k].width) + "x" + std::to_string(scales_[k].height);
    }
    return s;
}

void ScaleSchedule::check_against(std::size_t height, std::size_t width, std::size_t bits) const {
    if (scales_.empty()) throw ShapeError("schedule: empty");
    if (scales_.back().height != height || scales_.back().width != width)
        throw ShapeError("schedule: last scale " + std::to_string(scales_.back().width) + "x" +
                         std::to_string(scales_.back().height) + " does not match latent " +
                         std::to_string(width) + "x" + std::to_string(height));
    for (const auto& s : scales_)
        if (s.bits != bits)
            throw ShapeError("schedule: token bit length " + std::to_string(s.bits) +
                             " does not match latent channels " + std::to_string(bits));
}

const char* to_string(PyramidKind kind) {
    return kind == PyramidKind::intra ? "intra" : "inter";
}

BsqResult bsq_quantize(std::span<const double> v) {
    BsqResult out;
    out.bits.resize(v.size());
    out.values.resize(v.size());
    const double mag = 1.0 / std::sqrt(static_cast<double>(v.size()));
    for (std::size_t s = 0; s < v.size(); ++s) {
        const bool bit = v[s] >= 0.0;
        out.bits[s] = bit;
        out.values[s] = bit ? mag : -mag;
    }
    return out;
}

DenseArray dequantize_tokens(const TokenMap& map) {
    const std::size_t L = map.spec.bits;
    if (map.bits.size() != TokenMap::expected_bits(map.spec, map.frames))
        throw ShapeError("token map: bit count does not match its scale");
    const double mag = 1.0 / std::sqrt(static_cast<double>(L));
    DenseArray out({map.frames, map.spec.height, map.spec.width, L});
    for (std::size_t i = 0; i < map.bits.size(); ++i) out[i] = map.bits[i] ? mag : -mag;
    return out;
}

QuantizeResult ms_quantize(const DenseArray& f, const ScaleSchedule& schedule, PyramidKind kind) {
    if (f.rank() != 4) throw ShapeError("ms_quantize: expected [t,h,w,L] latent");
    schedule.check_against(f.extent(1), f.extent(2), f.extent(3));
    const std::size_t frames = f.extent(0);
    const std::size_t L = f.extent(3);
    const Extent2D full{f.extent(1), f.extent(2)};

    QuantizeResult out;
    out.pyramid.schedule = schedule;
    out.pyramid.kind = kind;
    out.pyramid.frames = frames;
    DenseArray e = f;
    for (std::size_t k = 0; k < schedule.size(); ++k) {
        const ScaleSpec& spec = schedule[k];
        const DenseArray down = resample_down(e, spec.extent());
        TokenMap map{spec, frames, std::vector<bool>(down.size())};
        DenseArray q(down.shape());
        const std::size_t tokens = down.size() / L;
        for (std::size_t t = 0; t < tokens; ++t) {
            const auto r = bsq_quantize(down.data().subspan(t * L, L));
            for (std::size_t s = 0; s < L; ++s) {
                map.bits[t * L + s] = r.bits[s];
                q[t * L + s] = r.values[s];
            }
        }
        const DenseArray up = resample_up(q, full);
        for (std::size_t i = 0; i < e.size(); ++i) e[i] -= up[i];
        out.pyramid.maps.push_back(std::move(map));
    }
    out.residual = std::move(e);
    return out;
}

DenseArray ms_dequantize(const ScalePyramid& pyramid, std::size_t prefix) {
    if (prefix > pyramid.schedule.size())
        throw RangeError("ms_dequantize: prefix " + std::to_string(prefix) + " exceeds K = " +
                         std::to_string(pyramid.schedule.size()));
    if (prefix > pyramid.maps.size())
        throw ContractError("ms_dequantize: only " + std::to_string(pyramid.maps.size()) +
                            " scales present, " + std::to_string(prefix) + " requested");
    const Extent2D full{pyramid.full_height(), pyramid.full_width()};
    DenseArray sum({pyramid.frames, full.height, full.width, pyramid.channels()});
    for (std::size_t k = 0; k < prefix; ++k) {
        const DenseArray up = resample_up(dequantize_tokens(pyramid.maps[k]), full);
        for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += up[i];
    }
    return sum;
}

DenseArray aggregate_scale_input(const ScalePyramid& pyramid, std::size_t k) {
    if (k == 0 || k > pyramid.schedule.size())
        throw RangeError("aggregate_scale_input: scale " + std::to_string(k) + " out of range");
    return resample_down(ms_dequantize(pyramid, k), pyramid.schedule[k - 1].extent());
}

DenseArray conditioning_input(const ScalePyramid& pyramid, std::size_t k) {
    if (k == 0 || k > pyramid.schedule.size())
        throw RangeError("conditioning_input: scale " + std::to_string(k) + " out of range");
    const ScaleSpec& spec = pyramid.schedule[k - 1];
    if (k == 1) return DenseArray({pyramid.frames, spec.height, spec.width, spec.bits});
    return resample_down(ms_dequantize(pyramid, k - 1), spec.extent());
}

ScaleAccumulator::ScaleAccumulator(const ScaleSchedule& schedule, std::size_t frames)
    : schedule_(schedule),
      frames_(frames),
      sum_({frames, schedule.back().height, schedule.back().width, schedule.back().bits}) {}

DenseArray ScaleAccumulator::next_input() const {
    if (added_ >= schedule_.size()) throw ProtocolError("ScaleAccumulator: all scales added");
    const ScaleSpec& spec = schedule_[added_];
    if (added_ == 0) return DenseArray({frames_, spec.height, spec.width, spec.bits});
    return resample_down(sum_, spec.extent());
}

void ScaleAccumulator::add(const TokenMap& map) {
    if (added_ >= schedule_.size()) throw ProtocolError("ScaleAccumulator: all scales added");
    if (!(map.spec == schedule_[added_]) || map.frames != frames_)
        throw ProtocolError("ScaleAccumulator: scale " + std::to_string(added_ + 1) +
                            " does not match the schedule");
    const DenseArray up = resample_up(dequantize_tokens(map), schedule_.back().extent());
    for (std::size_t i = 0; i < sum_.size(); ++i) sum_[i] += up[i];
    ++added_;
}

std::size_t raw_bit_total(const ScaleSchedule& schedule, std::size_t frames) {
    std::size_t n = 0;
    for (const auto& s : schedule.scales()) n += TokenMap::expected_bits(s, frames);
    return n;
}

} // namespace progvc
