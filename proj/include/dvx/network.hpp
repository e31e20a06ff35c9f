#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "dvx/adam.hpp"
#include "dvx/layers.hpp"
#include "dvx/pointio.hpp"

namespace dvx {

// The displacement regression U-Net: a 2-channel occupancy pair in, a
// 3-channel displacement field out, with three skip concatenations feeding
// the decoder. Channel progression: 2-8-16-32-64 down, 96-64-64 / 80-32-32 /
// 40-16-16-3 up. Grid size must be divisible by 8 (three pooling levels).
template <typename T>
struct DispVoxNet {
    int q = 0;
    Conv3d<T> conv1, conv2, conv3, conv4;
    Deconv3d<T> deconv1, deconv2, deconv3, deconv4, deconv5, deconv6, deconv7;

    explicit DispVoxNet(int q_)
        : q(q_),
          conv1({2, 8, 7, 3, 1}),
          conv2({8, 16, 5, 2, 1}),
          conv3({16, 32, 3, 1, 1}),
          conv4({32, 64, 3, 1, 1}),
          deconv1({96, 64, 2, 0, 2}),
          deconv2({64, 64, 3, 1, 1}),
          deconv3({80, 32, 2, 0, 2}),
          deconv4({32, 32, 5, 2, 1}),
          deconv5({40, 16, 2, 0, 2}),
          deconv6({16, 16, 7, 3, 1}),
          deconv7({16, 3, 3, 1, 1}) {
        require(q >= 8 && q % 8 == 0, "grid size must be a positive multiple of 8");
    }

    void init(std::uint64_t seed) {
        auto rng = make_rng(seed);
        conv1.init(rng);
        conv2.init(rng);
        conv3.init(rng);
        conv4.init(rng);
        deconv1.init(rng);
        deconv2.init(rng);
        deconv3.init(rng);
        deconv4.init(rng);
        deconv5.init(rng);
        deconv6.init(rng);
        deconv7.init(rng);
    }

    struct Forward {
        // Layer inputs/outputs retained for the backward pass.
        Tensor4<T> input;
        Tensor4<T> a1, r1, a2, r2, a3, r3, a4, r4;  // encoder pre/post activations
        MaxPool3dResult<T> p1, p2, p3;
        Tensor4<T> c1, d1, d2, r5, c2, d3, d4, r6, c3, d5, d6, r7;
        Tensor4<T> out;
    };

    Forward forward(const Tensor4<T>& input) const {
        require(input.dx == q && input.dy == q && input.dz == q && input.c == 2,
                "DispVoxNet expects a " + std::to_string(q) + "^3 x 2 input, got " +
                    input.shape_string());
        Forward f;
        f.input = input;
        f.a1 = conv1.forward(f.input);
        f.r1 = leaky_relu_forward(f.a1);
        f.p1 = maxpool3d_forward(f.r1);
        f.a2 = conv2.forward(f.p1.out);
        f.r2 = leaky_relu_forward(f.a2);
        f.p2 = maxpool3d_forward(f.r2);
        f.a3 = conv3.forward(f.p2.out);
        f.r3 = leaky_relu_forward(f.a3);
        f.p3 = maxpool3d_forward(f.r3);
        f.a4 = conv4.forward(f.p3.out);
        f.r4 = leaky_relu_forward(f.a4);
        f.c1 = concat_channels(f.r4, f.p3.out);
        f.d1 = deconv1.forward(f.c1);
        f.d2 = deconv2.forward(f.d1);
        f.r5 = leaky_relu_forward(f.d2);
        f.c2 = concat_channels(f.r5, f.p2.out);
        f.d3 = deconv3.forward(f.c2);
        f.d4 = deconv4.forward(f.d3);
        f.r6 = leaky_relu_forward(f.d4);
        f.c3 = concat_channels(f.r6, f.p1.out);
        f.d5 = deconv5.forward(f.c3);
        f.d6 = deconv6.forward(f.d5);
        f.r7 = leaky_relu_forward(f.d6);
        f.out = deconv7.forward(f.r7);
        return f;
    }

    Tensor4<T> infer(const Tensor4<T>& input) const { return forward(input).out; }

    // Populates every layer's gw/gb from the loss gradient on the output.
    void backward(const Forward& f, const Tensor4<T>& grad_out) {
        auto g_r7 = deconv7.backward(f.r7, grad_out);
        auto g_d6 = leaky_relu_backward(f.d6, g_r7);
        auto g_d5 = deconv6.backward(f.d5, g_d6);
        auto g_c3 = deconv5.backward(f.c3, g_d5);
        auto [g_r6, g_p1] = concat_channels_backward(f.r6.c, f.p1.out.c, g_c3);
        auto g_d4 = leaky_relu_backward(f.d4, g_r6);
        auto g_d3 = deconv4.backward(f.d3, g_d4);
        auto g_c2 = deconv3.backward(f.c2, g_d3);
        auto [g_r5, g_p2] = concat_channels_backward(f.r5.c, f.p2.out.c, g_c2);
        auto g_d2 = leaky_relu_backward(f.d2, g_r5);
        auto g_d1 = deconv2.backward(f.d1, g_d2);
        auto g_c1 = deconv1.backward(f.c1, g_d1);
        auto [g_r4, g_p3] = concat_channels_backward(f.r4.c, f.p3.out.c, g_c1);
        auto g_a4 = leaky_relu_backward(f.a4, g_r4);
        auto g_p3_in = conv4.backward(f.p3.out, g_a4);
        for (std::size_t i = 0; i < g_p3.size(); ++i) g_p3.data[i] += g_p3_in.data[i];
        auto g_r3 = maxpool3d_backward(f.r3, f.p3, g_p3);
        auto g_a3 = leaky_relu_backward(f.a3, g_r3);
        auto g_p2_in = conv3.backward(f.p2.out, g_a3);
        for (std::size_t i = 0; i < g_p2.size(); ++i) g_p2.data[i] += g_p2_in.data[i];
        auto g_r2 = maxpool3d_backward(f.r2, f.p2, g_p2);
        auto g_a2 = leaky_relu_backward(f.a2, g_r2);
        auto g_p1_in = conv2.backward(f.p1.out, g_a2);
        for (std::size_t i = 0; i < g_p1.size(); ++i) g_p1.data[i] += g_p1_in.data[i];
        auto g_r1 = maxpool3d_backward(f.r1, f.p1, g_p1);
        auto g_a1 = leaky_relu_backward(f.a1, g_r1);
        conv1.backward(f.input, g_a1);
    }

    // Deterministic parameter order; also the checkpoint serialization order.
    std::vector<ParamRef<T>> param_refs() {
        std::vector<ParamRef<T>> r;
        auto add = [&r](const std::string& name, auto& layer) {
            r.push_back({name + ".w", &layer.w, &layer.gw});
            r.push_back({name + ".b", &layer.b, &layer.gb});
        };
        add("conv1", conv1);
        add("conv2", conv2);
        add("conv3", conv3);
        add("conv4", conv4);
        add("deconv1", deconv1);
        add("deconv2", deconv2);
        add("deconv3", deconv3);
        add("deconv4", deconv4);
        add("deconv5", deconv5);
        add("deconv6", deconv6);
        add("deconv7", deconv7);
        return r;
    }

    void copy_weights_from(const DispVoxNet& other) {
        require(q == other.q, "cannot copy weights between different grid sizes");
        auto dst = param_refs();
        auto src = const_cast<DispVoxNet&>(other).param_refs();
        for (std::size_t i = 0; i < dst.size(); ++i) *dst[i].value = *src[i].value;
    }

    bool weights_equal(const DispVoxNet& other) {
        auto a = param_refs();
        auto b = const_cast<DispVoxNet&>(other).param_refs();
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i].value->size() != b[i].value->size()) return false;
            if (std::memcmp(a[i].value->data(), b[i].value->data(),
                            a[i].value->size() * sizeof(T)) != 0)
                return false;
        }
        return true;
    }
};

// Shape table for Table-1 conformance checks: (dim, channels) per row ID.
inline std::vector<std::pair<std::string, std::pair<int, int>>> dispvoxnet_row_shapes(int q) {
    return {
        {"1:input", {q, 2}},        {"2:conv", {q, 8}},          {"3:lrelu", {q, 8}},
        {"4:maxpool", {q / 2, 8}},  {"5:conv", {q / 2, 16}},     {"6:lrelu", {q / 2, 16}},
        {"7:maxpool", {q / 4, 16}}, {"8:conv", {q / 4, 32}},     {"9:lrelu", {q / 4, 32}},
        {"10:maxpool", {q / 8, 32}},{"11:conv", {q / 8, 64}},    {"12:lrelu", {q / 8, 64}},
        {"13:deconv", {q / 4, 64}}, {"14:deconv", {q / 4, 64}},  {"15:lrelu", {q / 4, 64}},
        {"16:deconv", {q / 2, 32}}, {"17:deconv", {q / 2, 32}},  {"18:lrelu", {q / 2, 32}},
        {"19:deconv", {q, 16}},     {"20:deconv", {q, 16}},      {"21:lrelu", {q, 16}},
        {"22:deconv", {q, 3}},
    };
}

namespace detail {

template <typename T>
void write_named_tensor(std::ostream& os, const std::string& name,
                        const std::vector<std::uint32_t>& dims, const std::vector<T>& data) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
    std::size_t n = 1;
    for (auto d : dims) {
        write_pod<std::uint32_t>(os, d);
        n *= d;
    }
    require(n == data.size(), "tensor dims do not match payload size");
    for (T v : data) write_pod<float>(os, static_cast<float>(v));
}

template <typename T>
void read_named_tensor(std::istream& is, const std::string& expect_name, std::vector<T>& data) {
    const auto len = read_pod<std::uint32_t>(is, "parameter name length");
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) fail("truncated checkpoint while reading parameter name");
    if (name != expect_name)
        fail("checkpoint parameter order mismatch: expected " + expect_name + ", found " + name);
    const auto nd = read_pod<std::uint32_t>(is, "parameter rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < nd; ++d) n *= read_pod<std::uint32_t>(is, "parameter dim");
    if (n != data.size())
        fail("checkpoint parameter " + name + " has wrong size: expected " +
             std::to_string(data.size()) + ", found " + std::to_string(n));
    for (auto& v : data) v = static_cast<T>(read_pod<float>(is, "parameter value"));
}

template <typename T>
std::vector<std::uint32_t> param_dims(const DispVoxNet<T>& model, std::size_t ref_index) {
    // Refs alternate weight/bias per layer in declaration order.
    const ConvSpec* specs[] = {
        &model.conv1.spec,   &model.conv2.spec,   &model.conv3.spec,   &model.conv4.spec,
        &model.deconv1.spec, &model.deconv2.spec, &model.deconv3.spec, &model.deconv4.spec,
        &model.deconv5.spec, &model.deconv6.spec, &model.deconv7.spec};
    const ConvSpec& s = *specs[ref_index / 2];
    if (ref_index % 2 == 0)
        return {static_cast<std::uint32_t>(s.kernel), static_cast<std::uint32_t>(s.kernel),
                static_cast<std::uint32_t>(s.kernel), static_cast<std::uint32_t>(s.in_ch),
                static_cast<std::uint32_t>(s.out_ch)};
    return {static_cast<std::uint32_t>(s.out_ch)};
}

}  // namespace detail

// Checkpoint block: magic "VXNW", version, q, then every parameter tensor in
// network order as (name, dims, float32 payload); Adam state appended when
// present.
template <typename T>
void save_network(DispVoxNet<T>& model, const AdamState<T>* adam, std::ostream& os) {
    os.write("VXNW", 4);
    detail::write_pod<std::uint32_t>(os, 1);
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(model.q));
    auto refs = model.param_refs();
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(refs.size()));
    for (std::size_t i = 0; i < refs.size(); ++i)
        detail::write_named_tensor(os, refs[i].name, detail::param_dims(model, i),
                                   *refs[i].value);
    const bool with_adam = adam != nullptr && !adam->m.empty();
    detail::write_pod<std::uint8_t>(os, with_adam ? 1 : 0);
    if (with_adam) {
        detail::write_pod<double>(os, adam->lr);
        detail::write_pod<double>(os, adam->beta1);
        detail::write_pod<double>(os, adam->beta2);
        detail::write_pod<double>(os, adam->eps);
        detail::write_pod<std::uint64_t>(os, adam->t);
        for (std::size_t i = 0; i < refs.size(); ++i) {
            for (T v : adam->m[i]) detail::write_pod<float>(os, static_cast<float>(v));
            for (T v : adam->v[i]) detail::write_pod<float>(os, static_cast<float>(v));
        }
    }
}

template <typename T>
DispVoxNet<T> load_network(std::istream& is, AdamState<T>* adam = nullptr) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VXNW", 4) != 0) fail("bad magic: not a VXNW network block");
    const auto version = detail::read_pod<std::uint32_t>(is, "version");
    if (version != 1) fail("unsupported VXNW version " + std::to_string(version));
    const auto q = detail::read_pod<std::uint32_t>(is, "grid size");
    DispVoxNet<T> model(static_cast<int>(q));
    auto refs = model.param_refs();
    const auto count = detail::read_pod<std::uint32_t>(is, "parameter count");
    if (count != refs.size()) fail("unexpected parameter count in checkpoint");
    for (auto& ref : refs) detail::read_named_tensor(is, ref.name, *ref.value);
    const auto flag = detail::read_pod<std::uint8_t>(is, "adam flag");
    if (flag == 1 && adam != nullptr) {
        adam->lr = detail::read_pod<double>(is, "lr");
        adam->beta1 = detail::read_pod<double>(is, "beta1");
        adam->beta2 = detail::read_pod<double>(is, "beta2");
        adam->eps = detail::read_pod<double>(is, "eps");
        adam->t = detail::read_pod<std::uint64_t>(is, "adam step");
        adam->m.resize(refs.size());
        adam->v.resize(refs.size());
        for (std::size_t i = 0; i < refs.size(); ++i) {
            adam->m[i].resize(refs[i].value->size());
            adam->v[i].resize(refs[i].value->size());
            for (auto& v : adam->m[i]) v = static_cast<T>(detail::read_pod<float>(is, "adam m"));
            for (auto& v : adam->v[i]) v = static_cast<T>(detail::read_pod<float>(is, "adam v"));
        }
    } else if (flag == 1) {
        // Caller does not want optimizer state; skip it.
        is.ignore(4 * sizeof(double) + sizeof(std::uint64_t));
        std::size_t total = 0;
        for (auto& ref : refs) total += ref.value->size();
        is.ignore(static_cast<std::streamsize>(2 * total * sizeof(float)));
        if (!is) fail("truncated checkpoint while skipping optimizer state");
    } else if (flag != 0) {
        fail("corrupt checkpoint: bad adam flag");
    }
    return model;
}

}  // namespace dvx
