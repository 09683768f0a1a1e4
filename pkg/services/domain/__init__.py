#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pure domain functions
No I/O and no logging side effects; services depend on this layer, never the reverse.
"""
