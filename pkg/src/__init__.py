"""影响函数操纵工具包"""

__version__ = "1.0.0"
__author__ = "影响函数攻击实验组"
__description__ = "广义线性模型的影响函数归因、影响力操纵攻击与公平性重加权评估"
