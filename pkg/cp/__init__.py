"""
波动率变点聚类系统 - CP模块

基于贝叶斯在线变点滤波与Wasserstein距离的收益率序列动态聚类。

核心组件：
- cp_model: 正态-逆伽马共轭AR(1)分段模型
- cp_filter: 最近变点后验滤波（剪枝到n个支撑点）
- cp_metric: 变点后验之间的W1距离与相异度矩阵
- cp_cluster: 平均连接层次聚类、叶序与平切
- cp_data_reader: 价格表读取与对数收益率
- cp_synth: 模型一致的合成数据
- cp_config: 运行配置

主程序入口：
    python3 main.py --help
"""

__version__ = "1.0.0"
__author__ = "CP Volatility Clustering"
