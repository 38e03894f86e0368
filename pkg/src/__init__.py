"""Recycled and private decentralized ADMM toolkit"""
