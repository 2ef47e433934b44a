#include "progvc/container.hpp"

#include <cstring>
#include <string>

#include "progvc/error.hpp"

namespace progvc {

namespace {

constexpr char kMagic[4] = {'P', 'G', 'V', 'C'};

class ByteWriter {
public:
    void put(std::uint64_t v, int bytes) {
        for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

    std::uint64_t get(int bytes, const char* field) {
        if (remaining() < static_cast<std::size_t>(bytes))
            throw ParseError(std::string("container truncated while reading ") + field);
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i) v |= std::uint64_t{in_[pos_++]} << (8 * i);
        return v;
    }
    std::size_t remaining() const { return in_.size() - pos_; }
    std::size_t pos() const { return pos_; }
    std::span<const std::uint8_t> take(std::size_t n) {
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

void validate(const Container& c) {
    const auto& h = c.header;
    if (h.schedule.size() == 0 || h.schedule.size() > 255)
        throw ContractError("container: scale count must be 1..255");
    if (h.kappa > h.schedule.size())
        throw ContractError("container: kappa_P " + std::to_string(h.kappa) + " exceeds K = " +
                            std::to_string(h.schedule.size()));
    if (c.segments.size() != h.segment_count())
        throw ContractError("container: " + std::to_string(c.segments.size()) +
                            " segments but header implies " + std::to_string(h.segment_count()));
    for (const auto& s : c.segments)
        if (s.payload.size() > 0xFFFFFFFFu)
            throw ContractError("container: segment payload too large");
}

} // namespace

std::size_t ContainerHeader::encoded_size() const {
    return 4 + 1 + 12 + 4 + 4 + 6 * schedule.size() + 8 + 2 + 8 * segment_count();
}

std::size_t Container::payload_bytes() const {
    std::size_t n = 0;
    for (const auto& s : segments) n += s.payload.size();
    return n;
}

std::vector<std::uint8_t> write_container(const Container& c) {
    validate(c);
    const auto& h = c.header;
    ByteWriter w;
    w.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
    w.put(h.version, 1);
    w.put(h.width, 4);
    w.put(h.height, 4);
    w.put(h.frames, 4);
    w.put(h.pad_right, 2);
    w.put(h.pad_bottom, 2);
    w.put(h.spatial, 1);
    w.put(h.temporal, 1);
    w.put(h.schedule.size(), 1);
    w.put(h.kappa, 1);
    for (const auto& s : h.schedule.scales()) {
        w.put(s.width, 2);
        w.put(s.height, 2);
        w.put(s.bits, 2);
    }
    w.put(h.model_hash, 8);
    w.put(c.segments.size(), 2);
    for (const auto& s : c.segments) {
        w.put(s.bit_count, 4);
        w.put(s.payload.size(), 4);
    }
    for (const auto& s : c.segments) w.raw(s.payload);
    return w.take();
}

Container read_container(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw ParseError("bad magic");
    ByteReader r(bytes.subspan(4));
    Container c;
    auto& h = c.header;
    h.version = static_cast<std::uint8_t>(r.get(1, "version"));
    if (h.version != kContainerVersion)
        throw ParseError("unsupported version " + std::to_string(h.version));
    h.width = static_cast<std::uint32_t>(r.get(4, "width"));
    h.height = static_cast<std::uint32_t>(r.get(4, "height"));
    h.frames = static_cast<std::uint32_t>(r.get(4, "frame count"));
    h.pad_right = static_cast<std::uint16_t>(r.get(2, "pad_right"));
    h.pad_bottom = static_cast<std::uint16_t>(r.get(2, "pad_bottom"));
    h.spatial = static_cast<std::uint8_t>(r.get(1, "spatial factor"));
    h.temporal = static_cast<std::uint8_t>(r.get(1, "temporal factor"));
    const auto scales = static_cast<std::size_t>(r.get(1, "scale count"));
    h.kappa = static_cast<std::uint8_t>(r.get(1, "kappa_P"));
    if (scales == 0) throw ParseError("scale count is zero");
    if (h.kappa > scales)
        throw ParseError("kappa_P " + std::to_string(h.kappa) + " exceeds scale count " +
                         std::to_string(scales));
    std::vector<ScaleSpec> specs(scales);
    for (auto& s : specs) {
        s.width = static_cast<std::uint16_t>(r.get(2, "schedule width"));
        s.height = static_cast<std::uint16_t>(r.get(2, "schedule height"));
        s.bits = static_cast<std::uint16_t>(r.get(2, "schedule bit length"));
    }
    try {
        h.schedule = ScaleSchedule(std::move(specs));
    } catch (const ShapeError& e) {
        throw ParseError(std::string("invalid schedule: ") + e.what());
    }
    h.model_hash = r.get(8, "model hash");
    const auto count = static_cast<std::size_t>(r.get(2, "segment count"));
    if (count != h.segment_count())
        throw ParseError("segment count " + std::to_string(count) + " does not match K + kappa_P = " +
                         std::to_string(h.segment_count()));
    std::vector<std::size_t> lengths(count);
    c.segments.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        c.segments[i].bit_count = static_cast<std::uint32_t>(r.get(4, "segment bit count"));
        lengths[i] = static_cast<std::size_t>(r.get(4, "segment byte length"));
    }
    for (std::size_t i = 0; i < count; ++i) {
        if (r.remaining() < lengths[i])
            throw ParseError("container truncated inside segment " + std::to_string(i) + " (" +
                             (i < scales ? "intra scale " + std::to_string(i + 1)
                                         : "inter scale " + std::to_string(i - scales + 1)) +
                             ")");
        const auto p = r.take(lengths[i]);
        c.segments[i].payload.assign(p.begin(), p.end());
    }
    if (r.remaining() != 0)
        throw ParseError(std::to_string(r.remaining()) + " trailing bytes after last segment");
    return c;
}

std::vector<std::uint8_t> truncate(std::span<const std::uint8_t> bytes, std::size_t new_kappa) {
    Container c = read_container(bytes);
    if (new_kappa > c.header.kappa)
        throw RangeError("truncate: kappa " + std::to_string(new_kappa) + " exceeds transmitted " +
                         std::to_string(c.header.kappa));
    c.segments.resize(c.header.scales() + new_kappa);
    c.header.kappa = static_cast<std::uint8_t>(new_kappa);
    return write_container(c);
}

} // namespace progvc
