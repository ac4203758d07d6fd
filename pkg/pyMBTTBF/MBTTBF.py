# This file is part of pyMBTTBF, the multi-level bottom-top and top-bottom fusion network
# Copyright 2024 the pyMBTTBF contributors listed in the README.md file.
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <http://www.gnu.org/licenses/>.

'''
DESCRIPTION
===========
Density regression network with multi-level bottom-top and top-bottom feature fusion.

A VGG16-style backbone is tapped after its conv3, conv4 and conv5 blocks and after an extra
conv6 layer (max-pooling followed by a 1x1 convolution to 128 channels), giving feature maps at
strides 4, 8, 16 and 32. Dimension reduction (DR) blocks bring every tap to 32 channels.
The taps are then fused by scale-complementary feature extraction blocks (SCFB) along two
chains: bottom-top, fine to coarse, and top-bottom, coarse to fine, each over two levels.
A self-attention module weighs the four chain outputs into the final feature map, from which
a 1x1 convolution predicts the density map at stride 4.

Every SCFB exchanges cross-scale residuals between its two inputs and emits one side density
map per branch, supervised by the scale band of that branch.

The simpler topologies of the ablation ladder share the same building blocks:

========== ===========================================================
NONE       backbone and conv6 only (baseline)
FLAT_ADD   DR taps resampled to stride 4 and added
FLAT_CONCAT DR taps resampled to stride 4, concatenated and convolved
BT         level-1 bottom-top chain
TB         level-1 top-bottom chain
BTTB       both level-1 chains and a two-way attention fuse
MBTTBF     both two-level chains and the four-way attention fuse
========== ===========================================================

PACKAGE CONTENTS
================
* :class:`NetworkConfig` Network configuration.
* :class:`MBTTBFNet` The network, all topologies.
* :class:`BaselineNet` Backbone, conv6 DR block and predictor only.
* :class:`Backbone` VGG16 layout or tiny stand-in.
* :class:`DRBlock` Channel reduction.
* :class:`SCFB` Scale-complementary feature extraction block.
* :class:`FuseConcat` Resample, concatenate and convolve (SCFB replacement).
* :class:`FusionChain` Bottom-top or top-bottom chain of blocks.
* :class:`AttentionFuse` Self-attention fusion.
* :class:`Predictor` Density head.
* :func:`save_checkpoint` / :func:`load_checkpoint` Parameter archive.
* :func:`load_backbone_weights` External backbone weights.
'''

from collections import OrderedDict, namedtuple
import io
import json
import logging
import math
import zipfile

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import AlignmentError, CheckpointError, ConfigError

logger = logging.getLogger(__name__)

# ==============================================================================
# List of constants defining the network graph
# ==============================================================================
# Topologies
NONE = 'NONE'
FLAT_ADD = 'FLAT_ADD'
FLAT_CONCAT = 'FLAT_CONCAT'
BT = 'BT'
TB = 'TB'
BTTB = 'BTTB'
MBTTBF = 'MBTTBF'
TOPOLOGIES = (NONE, FLAT_ADD, FLAT_CONCAT, BT, TB, BTTB, MBTTBF)

# Backbones
VGG16_LAYOUT = 'vgg16_layout'
TINY = 'tiny'
BACKBONES = (VGG16_LAYOUT, TINY)

TAP_NAMES = ('conv3', 'conv4', 'conv5', 'conv6')
TAP_STRIDES = OrderedDict([('conv3', 4), ('conv4', 8), ('conv5', 16), ('conv6', 32)])
# Input sizes are padded to a multiple of the coarsest stride
PAD_MULTIPLE = 32
PREDICTION_STRIDE = 4
DR_CHANNELS = 32
ATTENTION_HIDDEN = 16

# Block widths and convolutions per block of conv1..conv5, and the conv6 width
_LAYOUTS = {
    VGG16_LAYOUT: ((64, 128, 256, 512, 512), (2, 2, 3, 3, 3), 128),
    TINY: ((32, 32, 32, 64, 64), (2, 2, 2, 2, 2), 64),
}

# Fusion chains: block name -> (input i, input j, output, level, bands of i, bands of j).
# The fused output adopts the stride of input j: the coarser one bottom-top, the finer one
# top-bottom. Bands name the backbone taps whose scale band supervises each side output.
BOTTOM_TOP_BLOCKS = OrderedDict([
    ('scfb1_34', ('conv3', 'conv4', 'bt1_34', 1, (3,), (4,))),
    ('scfb1_45', ('bt1_34', 'conv5', 'bt1_45', 1, (4,), (5,))),
    ('scfb1_56', ('bt1_45', 'conv6', 'bt1_56', 1, (5,), (6,))),
    ('scfb2_345', ('bt1_34', 'bt1_45', 'bt2_345', 2, (3, 4), (4, 5))),
    ('scfb2_456', ('bt2_345', 'bt1_56', 'bt2_456', 2, (3, 4, 5), (5, 6))),
])
TOP_BOTTOM_BLOCKS = OrderedDict([
    ('scfb1_65', ('conv6', 'conv5', 'tb1_65', 1, (6,), (5,))),
    ('scfb1_54', ('tb1_65', 'conv4', 'tb1_54', 1, (5,), (4,))),
    ('scfb1_43', ('tb1_54', 'conv3', 'tb1_43', 1, (4,), (3,))),
    ('scfb2_654', ('tb1_65', 'tb1_54', 'tb2_654', 2, (5, 6), (4, 5))),
    ('scfb2_543', ('tb2_654', 'tb1_43', 'tb2_543', 2, (4, 5, 6), (3, 4))),
])

# Stored next to the parameters in a checkpoint
CONFIG_KEY = '__config__'

LayerSpec = namedtuple('LayerSpec', ['kind', 'in_channels', 'out_channels', 'kernel', 'stride'])
FeatureGrid = namedtuple('FeatureGrid', ['values', 'stride'])
SideOutput = namedtuple('SideOutput', ['block', 'branch', 'level', 'bands', 'values', 'stride'])


class ScfbOutput(object):
    ''' Everything computed inside one fusion block.

    ``inputs`` are the two inputs resampled to the fused stride, ``residuals`` the cross-scale
    residuals (F_i^r, F_j^r), ``hats`` the inputs after the residual exchange, ``sides`` the
    side density maps. The last three are None for :class:`FuseConcat`.
    '''

    def __init__(self, fused, inputs, residuals=None, hats=None, sides=None):
        self.fused = fused
        self.inputs = inputs
        self.residuals = residuals
        self.hats = hats
        self.sides = sides


class FusionState(object):
    ''' Named feature grids of one forward pass.'''

    def __init__(self, image_size, scale_supervision):
        self.image_size = image_size
        self.scale_supervision = scale_supervision
        self.raw_taps = OrderedDict()
        self.taps = OrderedDict()
        self.bt = OrderedDict()
        self.tb = OrderedDict()
        self.blocks = OrderedDict()
        self.attention = None
        self.attention_inputs = []
        self.fused = None
        self.prediction = None
        self.side_outputs = []

    def predicted_count(self):
        return float(self.prediction.values.sum())


class NetworkConfig(object):
    ''' Network configuration.

    Parameters
    ----------
    backbone : str
        ``vgg16_layout`` or ``tiny``.
    topology : str
        One of :data:`TOPOLOGIES`.
    dr_channels : int
        Width of the DR blocks and of every fusion feature map.
    use_scfb : bool
        SCFBs in the chains, otherwise resample-concatenate-convolve fusion.
    use_scale_supervision : bool
        Whether the side outputs enter the loss.
    rng_seed : int
        Seed of the parameter initialisation.
    '''

    def __init__(self, backbone=TINY, topology=MBTTBF, dr_channels=DR_CHANNELS, use_scfb=True,
                 use_scale_supervision=True, rng_seed=0):
        if backbone not in BACKBONES:
            raise ConfigError(f'unknown backbone {backbone!r}, expected one of {BACKBONES}')
        if topology not in TOPOLOGIES:
            raise ConfigError(f'unknown topology {topology!r}, expected one of {TOPOLOGIES}')
        if int(dr_channels) < 1:
            raise ConfigError(f'dr_channels must be positive, got {dr_channels}')
        self.backbone = backbone
        self.topology = topology
        self.dr_channels = int(dr_channels)
        self.use_scfb = bool(use_scfb)
        self.use_scale_supervision = bool(use_scale_supervision)
        self.rng_seed = int(rng_seed)

    def to_dict(self):
        return OrderedDict([('backbone', self.backbone), ('topology', self.topology),
                            ('dr_channels', self.dr_channels), ('use_scfb', self.use_scfb),
                            ('use_scale_supervision', self.use_scale_supervision),
                            ('rng_seed', self.rng_seed)])

    @classmethod
    def from_dict(cls, params):
        return cls(**params)

    def replace(self, **kwargs):
        params = self.to_dict()
        params.update(kwargs)
        return NetworkConfig.from_dict(params)

    def __repr__(self):
        return 'NetworkConfig(' + ', '.join(f'{k}={v!r}' for k, v in self.to_dict().items()) + ')'


def backbone_layout(backbone):
    ''' Layer list of a backbone and the layer closing each tap.

    Returns
    -------
    layers : list
        (name, LayerSpec) pairs in execution order.
    taps : dict
        Tap name -> name of the last layer of the tap.
    '''

    widths, n_convs, conv6_width = _LAYOUTS[backbone]
    layers, taps = [], {}
    in_ch = 3
    for block, (width, n) in enumerate(zip(widths, n_convs), start=1):
        if block > 1:
            layers.append((f'pool{block - 1}', LayerSpec('maxpool', in_ch, in_ch, 2, 2)))
        for i in range(1, n + 1):
            layers.append((f'conv{block}_{i}', LayerSpec('conv', in_ch, width, 3, 1)))
            layers.append((f'relu{block}_{i}', LayerSpec('relu', width, width, 1, 1)))
            in_ch = width
        if block >= 3:
            taps[f'conv{block}'] = f'relu{block}_{n}'
    layers.append(('pool5', LayerSpec('maxpool', in_ch, in_ch, 2, 2)))
    layers.append(('conv6', LayerSpec('conv', in_ch, conv6_width, 1, 1)))
    layers.append(('relu6', LayerSpec('relu', conv6_width, conv6_width, 1, 1)))
    taps['conv6'] = 'relu6'
    return layers, taps


def tap_channels(backbone):
    layers, taps = backbone_layout(backbone)
    specs = dict(layers)
    return OrderedDict((name, specs[taps[name]].out_channels) for name in TAP_NAMES)


def _make_layer(spec):
    if spec.kind == 'conv':
        if spec.kernel % 2 == 0:
            raise ConfigError(f'convolution kernels must be odd, got {spec.kernel}')
        return nn.Conv2d(spec.in_channels, spec.out_channels, spec.kernel, stride=spec.stride,
                         padding=spec.kernel // 2)
    if spec.kind == 'maxpool':
        return nn.MaxPool2d(spec.kernel, stride=spec.stride)
    if spec.kind == 'relu':
        return nn.ReLU()
    if spec.kind == 'sigmoid':
        return nn.Sigmoid()
    if spec.kind == 'upsample':
        return nn.Upsample(scale_factor=spec.stride, mode='bilinear', align_corners=False)
    raise ConfigError(f'unknown layer kind {spec.kind!r}')


def resample(values, size):
    ''' Bilinear upsampling or average pooling of an N x C x h x w tensor to ``size``.'''
    h, w = values.shape[-2:]
    if (h, w) == tuple(size):
        return values
    if h >= size[0] and w >= size[1]:
        if h % size[0] or w % size[1] or h // size[0] != w // size[1]:
            raise AlignmentError(f'cannot pool a {h}x{w} map to {size[0]}x{size[1]}')
        return F.avg_pool2d(values, h // size[0])
    return F.interpolate(values, size=tuple(size), mode='bilinear', align_corners=False)


def pad_to_multiple(image, multiple=PAD_MULTIPLE):
    h, w = image.shape[-2:]
    pad_h, pad_w = (-h) % multiple, (-w) % multiple
    if pad_h or pad_w:
        image = F.pad(image, (0, pad_w, 0, pad_h))
    return image


def image_to_tensor(image, dtype=torch.float32):
    ''' H x W x 3 array in [0, 1] to a 1 x 3 x H x W tensor.'''
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.stack([image] * 3, axis=-1)
    return torch.from_numpy(np.ascontiguousarray(image[..., :3].transpose(2, 0, 1))[None]).to(dtype)


def _crop(values, image_size, stride):
    return values[..., :-(-image_size[0] // stride), :-(-image_size[1] // stride)]


class ConvReLU(nn.Module):

    def __init__(self, in_channels, out_channels, kernel):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel, padding=kernel // 2)
        self.relu = nn.ReLU()

    def forward(self, x):
        return self.relu(self.conv(x))


class Backbone(nn.Module):
    ''' VGG16 layout (or its tiny stand-in) tapped at conv3, conv4, conv5 and conv6.'''

    def __init__(self, backbone=VGG16_LAYOUT):
        super().__init__()
        layers, taps = backbone_layout(backbone)
        self.layers = nn.Sequential(OrderedDict((name, _make_layer(spec))
                                                for name, spec in layers))
        self.tap_after = {last: tap for tap, last in taps.items()}
        self.channels = tap_channels(backbone)

    def forward(self, image):
        taps = OrderedDict()
        x = image
        for name, layer in self.layers.named_children():
            x = layer(x)
            if name in self.tap_after:
                tap = self.tap_after[name]
                taps[tap] = FeatureGrid(x, TAP_STRIDES[tap])
        return taps


class DRBlock(nn.Module):

    def __init__(self, in_channels, out_channels=DR_CHANNELS):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, 1)
        self.relu = nn.ReLU()

    def forward(self, tap):
        return FeatureGrid(self.relu(self.conv(tap.values)), tap.stride)


class SCFB(nn.Module):
    ''' Scale-complementary feature extraction block.

    Both inputs are brought to the stride of the target input. Each branch sends a residual
    c1 of its own features to the other branch, the sums go through c2, a 1x1 convolution c3
    turns each branch into a side density map, and the block outputs G_i + G_j.
    '''

    def __init__(self, channels=DR_CHANNELS, target='j'):
        super().__init__()
        if target not in ('i', 'j'):
            raise ConfigError(f'SCFB target must be i or j, got {target!r}')
        self.target = target
        self.c1_i = ConvReLU(channels, channels, 3)
        self.c1_j = ConvReLU(channels, channels, 3)
        self.c2_i = ConvReLU(channels, channels, 3)
        self.c2_j = ConvReLU(channels, channels, 3)
        self.c3_i = ConvReLU(channels, 1, 1)
        self.c3_j = ConvReLU(channels, 1, 1)

    def zero_residuals(self):
        with torch.no_grad():
            for conv in (self.c1_i.conv, self.c1_j.conv):
                conv.weight.zero_()
                conv.bias.zero_()

    def forward(self, f_i, f_j):
        ref = f_j if self.target == 'j' else f_i
        size = ref.values.shape[-2:]
        x_i, x_j = resample(f_i.values, size), resample(f_j.values, size)
        if x_i.shape != x_j.shape:
            raise AlignmentError(f'SCFB inputs disagree after resampling: '
                                 f'{tuple(x_i.shape)} vs {tuple(x_j.shape)}')
        r_i, r_j = self.c1_i(x_i), self.c1_j(x_j)
        hat_i, hat_j = x_i + r_j, x_j + r_i
        g_i, g_j = self.c2_i(hat_i), self.c2_j(hat_j)
        return ScfbOutput(FeatureGrid(g_i + g_j, ref.stride), (x_i, x_j),
                          residuals=(r_i, r_j), hats=(hat_i, hat_j),
                          sides=(self.c3_i(g_i), self.c3_j(g_j)))


class FuseConcat(nn.Module):
    ''' Resample to the target stride, concatenate, 3x3 convolution. No side outputs.'''

    def __init__(self, channels=DR_CHANNELS, target='j'):
        super().__init__()
        self.target = target
        self.fuse = ConvReLU(2 * channels, channels, 3)

    def forward(self, f_i, f_j):
        ref = f_j if self.target == 'j' else f_i
        size = ref.values.shape[-2:]
        x_i, x_j = resample(f_i.values, size), resample(f_j.values, size)
        fused = self.fuse(torch.cat([x_i, x_j], dim=1))
        return ScfbOutput(FeatureGrid(fused, ref.stride), (x_i, x_j))


class FusionChain(nn.Module):
    ''' Bottom-top or top-bottom chain of fusion blocks up to ``levels``.'''

    def __init__(self, blocks, levels=2, channels=DR_CHANNELS, use_scfb=True):
        super().__init__()
        self.table = OrderedDict((name, row) for name, row in blocks.items()
                                 if row[3] <= levels)
        block_cls = SCFB if use_scfb else FuseConcat
        self.blocks = nn.ModuleDict((name, block_cls(channels)) for name in self.table)

    def forward(self, taps):
        ''' Runs the chain on the DR taps.

        Returns
        -------
        maps : OrderedDict
            Output name -> FeatureGrid.
        outputs : OrderedDict
            Block name -> ScfbOutput.
        sides : list
            SideOutput of every SCFB branch.
        '''
        grids = OrderedDict(taps)
        maps, outputs, sides = OrderedDict(), OrderedDict(), []
        for name, (in_i, in_j, out, level, bands_i, bands_j) in self.table.items():
            result = self.blocks[name](grids[in_i], grids[in_j])
            grids[out] = maps[out] = result.fused
            outputs[name] = result
            if result.sides is not None:
                stride = result.fused.stride
                sides.append(SideOutput(name, 'i', level, bands_i, result.sides[0], stride))
                sides.append(SideOutput(name, 'j', level, bands_j, result.sides[1], stride))
        return maps, outputs, sides


class AttentionFuse(nn.Module):
    ''' A = sigmoid(conv(relu(conv(cat(M_1..M_n))))), F_f = sum_k A^k * M_k.

    Each attention channel is a spatial gate shared by all channels of its input.
    '''

    def __init__(self, n_inputs, channels=DR_CHANNELS, hidden=ATTENTION_HIDDEN):
        super().__init__()
        self.n_inputs = n_inputs
        self.conv1 = nn.Conv2d(n_inputs * channels, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, n_inputs, 1)
        self.relu = nn.ReLU()

    def zero(self):
        with torch.no_grad():
            for conv in (self.conv1, self.conv2):
                conv.weight.zero_()
                conv.bias.zero_()

    def forward(self, inputs, size):
        ''' Returns (A, F_f, resampled inputs) at the spatial ``size`` of stride 4.'''
        maps = [resample(grid.values, size) for grid in inputs]
        attention = torch.sigmoid(self.conv2(self.relu(self.conv1(torch.cat(maps, dim=1)))))
        fused = sum(attention[:, k:k + 1] * m for k, m in enumerate(maps))
        return attention, fused, maps


class Predictor(nn.Module):

    def __init__(self, channels=DR_CHANNELS):
        super().__init__()
        self.conv = nn.Conv2d(channels, 1, 1)
        self.relu = nn.ReLU()

    def forward(self, features):
        return self.relu(self.conv(features))


def _init_parameters(module, seed):
    ''' Zero-mean normal weights with ReLU gain, zero biases, in module order.'''
    generator = torch.Generator().manual_seed(int(seed))
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            std = math.sqrt(2.0 / fan_in)
            with torch.no_grad():
                m.weight.copy_(torch.randn(m.weight.shape, generator=generator) * std)
                m.bias.zero_()


def baseline_forward(backbone, dr6, predictor, image):
    ''' Backbone, conv6 DR block and predictor, the NONE topology.'''
    h, w = image.shape[-2:]
    raw = backbone(pad_to_multiple(image))
    tap6 = dr6(raw['conv6'])
    size = raw['conv3'].values.shape[-2:]
    fused = resample(tap6.values, size)
    prediction = _crop(predictor(fused), (h, w), PREDICTION_STRIDE)
    return raw, tap6, fused, prediction


class BaselineNet(nn.Module):

    def __init__(self, backbone, dr6, predictor):
        super().__init__()
        self.backbone = backbone
        self.dr6 = dr6
        self.predictor = predictor

    def forward(self, image):
        return baseline_forward(self.backbone, self.dr6, self.predictor, image)[3]


class MBTTBFNet(nn.Module):
    ''' Density regression network for every topology of the ablation ladder.

    Parameters
    ----------
    config : NetworkConfig
        Graph description and initialisation seed.
    '''

    def __init__(self, config=None):
        super().__init__()
        if config is None:
            config = NetworkConfig()
        self.config = config
        dr = config.dr_channels
        topology = config.topology

        self.backbone = Backbone(config.backbone)
        taps = (('conv6',) if topology == NONE else TAP_NAMES)
        self.dr = nn.ModuleDict((name, DRBlock(self.backbone.channels[name], dr))
                                for name in taps)
        if topology == FLAT_CONCAT:
            self.flat_fuse = ConvReLU(len(TAP_NAMES) * dr, dr, 3)
        levels = 2 if topology == MBTTBF else 1
        if topology in (BT, BTTB, MBTTBF):
            self.bottom_top = FusionChain(BOTTOM_TOP_BLOCKS, levels, dr, config.use_scfb)
        if topology in (TB, BTTB, MBTTBF):
            self.top_bottom = FusionChain(TOP_BOTTOM_BLOCKS, levels, dr, config.use_scfb)
        if topology == BTTB:
            self.attention = AttentionFuse(2, dr)
        elif topology == MBTTBF:
            self.attention = AttentionFuse(4, dr)
        self.predictor = Predictor(dr)
        _init_parameters(self, config.rng_seed)

    def zero_scfb_residuals(self):
        for m in self.modules():
            if isinstance(m, SCFB):
                m.zero_residuals()

    def zero_attention(self):
        if hasattr(self, 'attention'):
            self.attention.zero()

    def baseline(self):
        if self.config.topology != NONE:
            raise ConfigError('only the NONE topology is a baseline network')
        return BaselineNet(self.backbone, self.dr['conv6'], self.predictor)

    def forward(self, image):
        ''' Runs the graph of the configured topology.

        Parameters
        ----------
        image : tensor
            N x 3 x H x W batch in [0, 1]; padded internally to a multiple of 32.

        Returns
        -------
        state : FusionState
            Every named feature grid; predictions and side outputs cropped to the image.
        '''

        h, w = image.shape[-2:]
        topology = self.config.topology
        state = FusionState((h, w), self.config.use_scale_supervision)

        if topology == NONE:
            raw, tap6, fused, prediction = baseline_forward(
                self.backbone, self.dr['conv6'], self.predictor, image)
            state.raw_taps = raw
            state.taps['conv6'] = tap6
            state.fused = FeatureGrid(fused, PREDICTION_STRIDE)
            state.prediction = FeatureGrid(prediction, PREDICTION_STRIDE)
            return state

        state.raw_taps = self.backbone(pad_to_multiple(image))
        for name, tap in state.raw_taps.items():
            state.taps[name] = self.dr[name](tap)
        size = state.taps['conv3'].values.shape[-2:]

        if topology in (FLAT_ADD, FLAT_CONCAT):
            maps = [resample(t.values, size) for t in state.taps.values()]
            state.attention_inputs = maps
            fused = sum(maps) if topology == FLAT_ADD else self.flat_fuse(torch.cat(maps, 1))
        else:
            if hasattr(self, 'bottom_top'):
                state.bt, blocks, sides = self.bottom_top(state.taps)
                state.blocks.update(blocks)
                state.side_outputs.extend(sides)
            if hasattr(self, 'top_bottom'):
                state.tb, blocks, sides = self.top_bottom(state.taps)
                state.blocks.update(blocks)
                state.side_outputs.extend(sides)
            if topology == BT:
                fused = resample(state.bt['bt1_56'].values, size)
            elif topology == TB:
                fused = state.tb['tb1_43'].values
            else:
                inputs = [state.bt['bt1_56'], state.tb['tb1_43']]
                if topology == MBTTBF:
                    inputs = [state.bt['bt1_56'], state.bt['bt2_456'],
                              state.tb['tb1_43'], state.tb['tb2_543']]
                state.attention, fused, state.attention_inputs = self.attention(inputs, size)

        state.fused = FeatureGrid(fused, PREDICTION_STRIDE)
        state.prediction = FeatureGrid(_crop(self.predictor(fused), (h, w), PREDICTION_STRIDE),
                                       PREDICTION_STRIDE)
        state.side_outputs = [s._replace(values=_crop(s.values, (h, w), s.stride))
                              for s in state.side_outputs]
        return state


def _write_npz(path, arrays):
    ''' np.savez with fixed member timestamps, so equal arrays give equal bytes.'''
    with zipfile.ZipFile(path, 'w', compression=zipfile.ZIP_STORED) as archive:
        for key, value in arrays.items():
            buffer = io.BytesIO()
            np.lib.format.write_array(buffer, np.asanyarray(value), allow_pickle=False)
            info = zipfile.ZipInfo(key + '.npy', date_time=(1980, 1, 1, 0, 0, 0))
            archive.writestr(info, buffer.getvalue())


def save_checkpoint(model, path):
    ''' Writes the parameters, keyed by their state-dict names, and the NetworkConfig.'''
    arrays = OrderedDict((k, v.detach().cpu().numpy()) for k, v in model.state_dict().items())
    arrays[CONFIG_KEY] = np.array(json.dumps(model.config.to_dict()))
    _write_npz(path, arrays)
    logger.info('Saved checkpoint %s', path)


def load_checkpoint(path):
    ''' Rebuilds the network stored by :func:`save_checkpoint`.

    Raises
    ------
    CheckpointError
        When the archive keys or shapes differ from those of the stored configuration.
    '''

    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(path, reason=str(e))
    with archive as data:
        if CONFIG_KEY not in data.files:
            raise CheckpointError(path, reason='no network configuration stored')
        try:
            config = NetworkConfig.from_dict(json.loads(str(data[CONFIG_KEY])))
        except (TypeError, ValueError, ConfigError) as e:
            raise CheckpointError(path, reason=f'bad network configuration: {e}')
        model = MBTTBFNet(config)
        expected = model.state_dict()
        stored = set(data.files) - {CONFIG_KEY}
        missing, unexpected = set(expected) - stored, stored - set(expected)
        if missing or unexpected:
            raise CheckpointError(path, missing, unexpected)
        state = OrderedDict()
        for key, ref in expected.items():
            value = data[key]
            if tuple(value.shape) != tuple(ref.shape):
                raise CheckpointError(path, reason=f'{key} has shape {value.shape}, '
                                                   f'expected {tuple(ref.shape)}')
            state[key] = torch.from_numpy(value).to(ref.dtype)
    model.load_state_dict(state)
    return model


def load_backbone_weights(model, path):
    ''' Copies external backbone weights (``.npz`` keyed ``conv1_1.weight`` ...).'''
    target = model.backbone.layers.state_dict()
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(path, reason=str(e))
    with archive as data:
        stored = set(data.files)
        missing, unexpected = set(target) - stored, stored - set(target)
        if missing or unexpected:
            raise CheckpointError(path, missing, unexpected)
        weights = OrderedDict()
        for key, ref in target.items():
            if tuple(data[key].shape) != tuple(ref.shape):
                raise CheckpointError(path, reason=f'{key} has shape {data[key].shape}')
            weights[key] = torch.from_numpy(data[key]).to(ref.dtype)
    model.backbone.layers.load_state_dict(weights)
    logger.info('Loaded backbone weights from %s', path)
