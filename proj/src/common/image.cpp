// Copyright Contributors to the arbigs project
// SPDX-License-Identifier: Apache-2.0
#include "arbigs/image.hpp"

#include "arbigs/errors.hpp"

namespace arbigs {

Tensor image_to_tensor(const Image& image) {
    Tensor t(3, image.height, image.width);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) t.at(c, y, x) = image.at(x, y, c);
    return t;
}

Image tensor_to_image(const Tensor& tensor) {
    if (tensor.channels != 3) {
        throw DimensionError("expected a 3-channel tensor, got " + std::to_string(tensor.channels));
    }
    Image img(tensor.width, tensor.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = tensor.at(c, y, x);
    return img;
}

} // namespace arbigs
